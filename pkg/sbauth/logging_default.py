import datetime
import logging

# per record: wall time, thread (shard lookups and executor calls run off the main thread), origin
_FORMAT = '[%(asctime)s] %(threadName)s %(name)s %(funcName)s::%(lineno)s %(levelname)s - %(message)s'

# third party loggers that flood debug output
_NOISY = ('asyncio',)


def configure(console_level=logging.INFO, file_level=logging.DEBUG, logfile_name=None, force=False):
    """
    Configures the root logger for the command line tools.
    Does nothing if the root logger already has handlers (e.g. under pytest) unless force is set.

    :param console_level: log level of the stderr handler
    :param file_level: log level of the file handler
    :param logfile_name: name of the log file, prefixed with the current date and time
    :returns root logger
    """
    root_logger = logging.getLogger()
    if root_logger.handlers and not force:
        return root_logger
    root_logger.setLevel(logging.DEBUG)

    formatter = logging.Formatter(_FORMAT, '%H:%M:%S')

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    console_handler.setLevel(console_level)
    root_logger.addHandler(console_handler)

    if logfile_name is not None:
        name_of_file = datetime.datetime.now().strftime(f'%Y-%m-%d_%H-%M_{logfile_name}.log')
        file_handler = logging.FileHandler(name_of_file)
        file_handler.setLevel(file_level)
        file_handler.setFormatter(formatter)
        root_logger.addHandler(file_handler)

    for name in _NOISY:
        logging.getLogger(name).setLevel(max(console_level, logging.INFO))

    return root_logger
