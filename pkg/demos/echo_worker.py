"""Minimal external evaluator: reward is the first vector coordinate.

Speaks the stdio protocol: a ready handshake, then one JSON response line
per JSON request line.
"""

import json
import sys

print(json.dumps({"ready": True}), flush=True)
for line in sys.stdin:
    line = line.strip()
    if not line:
        continue
    request = json.loads(line)
    response = {"id": request["id"], "reward": request["vector"][0]}
    print(json.dumps(response), flush=True)
