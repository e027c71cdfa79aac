"""Rank-based TCP transport for the federation protocol.

The server is rank 0 and listens; clients connect, send Hello, and are
assigned ranks 1..K in Hello order. Rounds are synchronous: the server
broadcasts the global vector, waits for every client's update, reduces in
rank order, and repeats. Given the same master seed, a TCP run is
bit-identical to an in-process run because both share the same update and
aggregation code and float64 survives the wire exactly.
"""

import socket

from . import fed as fd
from . import model_core as mc
from .wire import FedMessage, read_frame, wire_encode

__all__ = ["serve_federation", "run_client"]


def _send(sock, msg):
    sock.sendall(wire_encode(msg))


def serve_federation(server_model, cfg: fd.FedConfig, n_clients, host="127.0.0.1",
                     port=0, hooks=None, ready_callback=None):
    """Run the server side; returns (final model, per-round update norms)."""
    hooks = hooks or fd.HookSet()
    template = server_model
    global_vec = mc.model_to_vector(server_model)
    listener = socket.create_server((host, port))
    listener.listen(n_clients)
    if ready_callback is not None:
        ready_callback(listener.getsockname())
    conns = {}
    try:
        for rank in range(1, n_clients + 1):
            conn, _ = listener.accept()
            hello = read_frame(conn)
            if hello.kind != "hello":
                raise ValueError(f"expected hello, got {hello.kind}")
            _send(conn, FedMessage("hello", rank=rank))
            conns[rank] = conn
        metrics = []
        for rnd in range(cfg.rounds):
            body = mc.vector_to_bytes(global_vec)
            for rank, conn in conns.items():
                _send(conn, FedMessage("global_model", round=rnd, rank=rank, body=body))
            updates = []
            for rank in sorted(conns):
                msg = read_frame(conns[rank])
                if msg.kind != "local_update" or msg.round != rnd:
                    raise ValueError("round desync or unexpected message")
                vec = mc.vector_from_bytes(msg.body, global_vec.layout)
                updates.append(fd.ClientUpdate(vec, msg.n_samples, msg.rank))
            ctx = {"round": rnd, "global": global_vec, "lr": cfg.lr, "config": cfg}
            agg = fd.server_aggregate(updates, hooks, ctx)
            global_vec = fd.apply_aggregate(global_vec, agg, cfg)
            metrics.append({"round": rnd, "agg_norm": agg.norm()})
        for conn in conns.values():
            _send(conn, FedMessage("bye"))
        return mc.vector_to_model(global_vec, template), metrics
    finally:
        for conn in conns.values():
            conn.close()
        listener.close()


def run_client(template_model, shard, cfg: fd.FedConfig, addr, master_seed=0,
               client_hooks=None):
    """Run one client against a serving federation; returns assigned rank."""
    layout = mc.model_to_vector(template_model).layout
    with socket.create_connection(addr) as sock:
        _send(sock, FedMessage("hello"))
        hello = read_frame(sock)
        if hello.kind != "hello":
            raise ValueError("server did not acknowledge hello")
        rank = hello.rank
        if callable(shard):
            shard = shard(rank)
        rng = fd.client_stream(master_seed, rank)
        hooks = client_hooks or []
        while True:
            msg = read_frame(sock)
            if msg.kind == "bye":
                return rank
            if msg.kind != "global_model":
                raise ValueError(f"unexpected message kind {msg.kind}")
            global_vec = mc.vector_from_bytes(msg.body, layout)
            vec, n = fd.client_local_update(global_vec, template_model, shard, cfg, rng)
            ctx = {"round": msg.round, "rank": rank, "global": global_vec,
                   "lr": cfg.lr, "config": cfg}
            for hook in hooks:
                vec = hook(vec, ctx)
            _send(sock, FedMessage("local_update", round=msg.round, rank=rank,
                                   n_samples=n, body=mc.vector_to_bytes(vec)))
