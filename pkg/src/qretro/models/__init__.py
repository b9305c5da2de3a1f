# JSON file schemas and report models
