from eventlog.setup import ExperimentLogger, JSONLFileHandler, configure_logging
