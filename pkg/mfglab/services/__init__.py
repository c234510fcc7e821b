# Workflow services between the CLI and the numerical modules
