"""Validates recorded gateway responses against the API schema served at /schema."""

import json
import sys

import jsonschema


def main(path):
    with open(path) as f:
        doc = json.load(f)
    schema = doc["schema"]
    jsonschema.Draft202012Validator.check_schema(schema)
    failures = 0
    seen = set()
    for i, sample in enumerate(doc["samples"]):
        wrapper = {"$ref": "#/$defs/" + sample["def"], "$defs": schema["$defs"]}
        errors = list(jsonschema.Draft202012Validator(wrapper).iter_errors(sample["body"]))
        seen.add(sample["def"])
        for e in errors:
            failures += 1
            print(f"sample {i} ({sample['def']}): {e.message} at {list(e.absolute_path)}")
    expected = {"session_created", "utterance_response", "commit_response", "session_state",
                "scene_document", "scene_list", "health", "error"}
    missing = expected - seen
    if missing:
        print("no samples for:", ", ".join(sorted(missing)))
        failures += 1
    print(f"{len(doc['samples'])} samples, {failures} failures")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1]))
