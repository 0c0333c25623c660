import csv
import io
import json
import os
import tempfile

from .logging import logger


def dump_json(document) -> str:
    return json.dumps(document, indent=2, sort_keys=True) + "\n"


def save_text(path, text):
    """Write `text` to `path` atomically (temporary file in the same directory + rename)."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_file = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp_file, path)
    except OSError:
        try:
            os.remove(tmp_file)
        except OSError:
            pass
        raise
    logger.debug(f"Saved {path}")


def save_json(path, document):
    save_text(path, dump_json(document))


def format_csv(header, rows) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return out.getvalue()


def save_csv(path, header, rows):
    save_text(path, format_csv(header, rows))
