"""
Interactive session service
===========================

Drive the HTTP API the browser frontend uses: create a session from a start
frame, inspect the predicted mask, step the generator with edits, and watch
the session state advance. Uses the in-process test client so no server
process is needed; `masksteer serve --model demo=<ckpt>` exposes the same
API over a real socket.
"""

from pathlib import Path

from fastapi.testclient import TestClient

from masksteer.data import load_frame_png
from masksteer.service import create_app, encode_frame, load_model_entry

CKPT = Path("demo_out/train/stage2/ckpt_stage2_final.pt")
DATA = Path("demo_out/train/data")

app = create_app({"demo": load_model_entry(CKPT)})
client = TestClient(app)

print(client.get("/api/v1/models").json())

f0 = load_frame_png(DATA / "clip_0000" / "000000.png")
resp = client.post("/api/v1/sessions",
                   json={"model_id": "demo", "frame": encode_frame(f0)}).json()
sid = resp["session_id"]
print("session:", sid, f"{resp['width']}x{resp['height']}")

# nudge the foreground right a few times, then grow it
for i in range(3):
    r = client.post(f"/api/v1/sessions/{sid}/step",
                    json={"mode": "positional", "dx": 4, "dy": 0})
    print(f"step {i}: {r.status_code}, frame bytes {len(r.json()['frame'])}")
r = client.post(f"/api/v1/sessions/{sid}/step",
                json={"mode": "affine", "sx": 1.3, "sy": 1.3})
print("scale step:", r.status_code)

state = client.get(f"/api/v1/sessions/{sid}").json()
print("history length:", state["history"]["length"])
client.delete(f"/api/v1/sessions/{sid}")
print("deleted; GET now", client.get(f"/api/v1/sessions/{sid}").status_code)
