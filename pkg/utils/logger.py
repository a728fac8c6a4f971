import datetime
import logging
import os
import sys

LOG_LEVEL_ENV = "FOEHN_LOG_LEVEL"

RUN_LOG_HEADER = "timestamp,command,station,learner,variable_set,status,n_outputs,error\n"


class KeyValueFormatter(logging.Formatter):
    """
    One line per record: '<utc-iso> <LEVEL> <logger> <message> key=value ...'.
    Extra fields are passed as logger.info("msg", extra={"fields": {...}}).
    """

    def format(self, record):
        stamp = datetime.datetime.fromtimestamp(record.created, tz=datetime.timezone.utc)
        parts = [
            stamp.strftime("%Y-%m-%dT%H:%M:%SZ"),
            record.levelname,
            record.name,
            record.getMessage(),
        ]
        fields = getattr(record, "fields", None) or {}
        for key in sorted(fields):
            value = fields[key]
            if isinstance(value, float):
                value = f"{value:.6g}"
            parts.append(f"{key}={value}")
        line = " ".join(str(p) for p in parts)
        if record.exc_info:
            line += "\n" + self.formatException(record.exc_info)
        return line


def get_logger(name):
    """
    Returns a logger below the 'foehn' root that writes structured lines to
    standard error. The level is read from FOEHN_LOG_LEVEL (default INFO).
    """
    root = logging.getLogger("foehn")
    if not getattr(root, "_foehn_configured", False):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(KeyValueFormatter())
        root.addHandler(handler)
        root.propagate = False
        root._foehn_configured = True
    level = os.environ.get(LOG_LEVEL_ENV, "INFO").upper()
    root.setLevel(getattr(logging, level, logging.INFO))
    short = name.split(".")[-1]
    return root.getChild(short)


def log_run(command, status, station="", learner="", variable_set="", n_outputs=0,
            error=None, logfile="output/run_log.csv"):
    """
    Append a log entry to the CSV run log with the command, its scope and outcome.
    """
    timestamp = datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")

    row = [
        timestamp,
        command,
        station or "",
        learner or "",
        variable_set or "",
        status,
        n_outputs,
        (str(error).replace(",", ";").replace("\n", " ") if error else ""),
    ]

    directory = os.path.dirname(logfile)
    if directory:
        os.makedirs(directory, exist_ok=True)

    # Write header if file is new
    try:
        with open(logfile, "x", encoding="utf-8") as f:
            f.write(RUN_LOG_HEADER)
    except FileExistsError:
        pass

    with open(logfile, "a", encoding="utf-8") as f:
        f.write(",".join(map(str, row)) + "\n")
