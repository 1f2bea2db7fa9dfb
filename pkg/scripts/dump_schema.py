"""Write the experiment config schema and the suite manifest schema as JSON files.

    python scripts/dump_schema.py [OUT_DIR]
"""
import json
import sys
from pathlib import Path

from yamabe_lab.schema import CONFIG_SCHEMA, MANIFEST_SCHEMA


def main(out_dir: str = "scripts") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, schema in (("config.schema.json", CONFIG_SCHEMA), ("manifest.schema.json", MANIFEST_SCHEMA)):
        (out / name).write_text(json.dumps(schema, indent=2) + "\n")
        print(out / name)


if __name__ == "__main__":
    main(*sys.argv[1:])
