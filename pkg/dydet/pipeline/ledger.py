"""Stage ledger: which pipeline stages are complete and what they produced.

Lives in `<out>/run.db`; `manifest.json` is exported from it after each run.
"""
import hashlib
import json
import os
import sqlite3

DB_NAME = "run.db"
MANIFEST_NAME = "manifest.json"


def init_db(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    conn = sqlite3.connect(os.path.join(out_dir, DB_NAME))
    cur = conn.cursor()

    cur.execute("""
    CREATE TABLE IF NOT EXISTS stages (
        name TEXT PRIMARY KEY,
        position INTEGER,
        input_hash TEXT,
        outputs TEXT,                  -- JSON {relative path: sha256}
        updated_at TEXT DEFAULT (datetime('now'))
    )""")

    cur.execute("""
    CREATE TABLE IF NOT EXISTS run (
        key TEXT PRIMARY KEY,
        value TEXT
    )""")

    conn.commit(); conn.close()


def get_conn(out_dir): return sqlite3.connect(os.path.join(out_dir, DB_NAME))


def file_sha256(path, chunk=1 << 20):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(chunk), b""):
            h.update(block)
    return h.hexdigest()


def outputs_hash(out_dir, outputs):
    """Combined digest of a stage's recorded outputs, used as input to later stages."""
    h = hashlib.sha256()
    for rel in sorted(outputs):
        h.update(rel.encode()); h.update(outputs[rel].encode())
    return h.hexdigest()


def stage_record(conn, name):
    cur = conn.cursor()
    cur.execute("SELECT input_hash, outputs FROM stages WHERE name=?", (name,))
    row = cur.fetchone()
    if row is None:
        return None
    return {"input_hash": row[0], "outputs": json.loads(row[1])}


def stage_is_current(conn, out_dir, name, input_hash):
    rec = stage_record(conn, name)
    if rec is None or rec["input_hash"] != input_hash:
        return False
    for rel, digest in rec["outputs"].items():
        p = os.path.join(out_dir, rel)
        if not os.path.exists(p) or file_sha256(p) != digest:
            return False
    return True


def record_stage(conn, out_dir, name, position, input_hash, rel_paths):
    outputs = {rel: file_sha256(os.path.join(out_dir, rel)) for rel in sorted(rel_paths)}
    conn.execute("""
        INSERT INTO stages (name, position, input_hash, outputs) VALUES (?, ?, ?, ?)
        ON CONFLICT(name) DO UPDATE SET position=excluded.position, input_hash=excluded.input_hash,
            outputs=excluded.outputs, updated_at=datetime('now')
    """, (name, position, input_hash, json.dumps(outputs, sort_keys=True)))
    conn.commit()
    return outputs


def forget_stages(conn, keep):
    """Drop rows for stages not in `keep` (e.g. gen-data after switching to fixed paths)."""
    cur = conn.cursor()
    cur.execute("SELECT name FROM stages")
    for (name,) in cur.fetchall():
        if name not in keep:
            conn.execute("DELETE FROM stages WHERE name=?", (name,))
    conn.commit()


def set_value(conn, key, value):
    conn.execute("INSERT OR REPLACE INTO run (key, value) VALUES (?, ?)", (key, json.dumps(value, sort_keys=True)))
    conn.commit()


def export_manifest(conn, out_dir):
    """Write manifest.json without timestamps so identical runs give identical bytes."""
    cur = conn.cursor()
    cur.execute("SELECT key, value FROM run ORDER BY key")
    manifest = {k: json.loads(v) for k, v in cur.fetchall()}
    cur.execute("SELECT name, input_hash, outputs FROM stages ORDER BY position")
    manifest["stages"] = [{"name": n, "input_hash": ih, "outputs": json.loads(o)} for n, ih, o in cur.fetchall()]
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest
