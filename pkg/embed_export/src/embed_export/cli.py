import json
import sys

import click

from . import exporter


@click.command("export")
@click.option("--in", "in_path", required=True, type=click.Path(),
              help="Comment file: JSON list of {poi_id, comments}.")
@click.option("--mode", type=click.Choice(["stub", "encoder"]), default="stub",
              show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def main(in_path, mode, out_path):
    """Embed POI comments and write a PEMB file."""
    try:
        comments = exporter.load_comment_file(in_path)
        summary = exporter.export(comments, mode, out_path)
    except exporter.ExportError as e:
        print(f"error: {e}", file=sys.stderr)
        raise SystemExit(2)
    print(json.dumps(summary, sort_keys=True))


if __name__ == "__main__":
    main()
