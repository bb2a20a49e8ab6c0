"""Service, remote clients, evaluation harness and command line."""
