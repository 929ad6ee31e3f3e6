"""Regenerate the committed golden protocol transcripts."""

import json
import pathlib

from tilesr.protocol import golden_transcript

out = pathlib.Path(__file__).resolve().parent.parent / "golden" / "transcripts.json"
out.parent.mkdir(exist_ok=True)
out.write_text(json.dumps(golden_transcript(), indent=2) + "\n")
print(f"wrote {out}")
