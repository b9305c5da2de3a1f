# Continuous-measurement filtering and retrodiction for linear bosonic systems
