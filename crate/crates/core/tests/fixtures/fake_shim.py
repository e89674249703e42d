"""Stand-in shim for protocol tests. Behaviour is picked by argv[1]."""
import json
import os
import sys
import time

mode = sys.argv[1] if len(sys.argv) > 1 else "pass"
line = sys.stdin.readline()

if mode == "silent":
    sys.exit(0)
if mode == "crash":
    sys.stderr.write("Traceback: shim blew up\n")
    sys.exit(3)
if mode == "sleep":
    time.sleep(60)
if mode == "garbage":
    print("this is not json")
    sys.exit(0)
if mode == "two":
    print('{"results": []}')
    print('{"results": []}')
    sys.exit(0)

req = json.loads(line)
n = len(req["cases"])
if mode == "reject":
    print(json.dumps({"error": "unsupported request"}))
elif mode == "short":
    print(json.dumps({"results": []}))
elif mode == "env":
    msg = "deny_io=" + os.environ.get("COLEARN_SANDBOX_DENY_IO", "?")
    print(json.dumps({"results": [{"index": i, "verdict": "pass", "message": msg} for i in range(n)]}))
elif mode == "long":
    results = [{"index": i, "verdict": "runtime_error", "message": "é" * 5000} for i in range(n)]
    print(json.dumps({"results": results}))
elif mode == "tiers":
    # basic cases pass, challenge cases fail
    results = []
    for i, c in enumerate(req["cases"]):
        ok = c["tier"] == "basic"
        results.append({"index": i, "verdict": "pass" if ok else "assertion_failed",
                        "message": "" if ok else "AssertionError"})
    print(json.dumps({"results": results}))
else:
    print(json.dumps({"results": [{"index": i, "verdict": "pass", "message": ""} for i in range(n)]}))
