"""Connectivity smoke test: python -m replaynet_client --ping HOST:PORT"""

import argparse
import sys

from .session import Session, SessionError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="python -m replaynet_client")
    parser.add_argument("--ping", required=True, metavar="HOST:PORT")
    parser.add_argument("--state-dim", type=int, default=64)
    parser.add_argument("--action-count", type=int, default=4)
    args = parser.parse_args(argv)

    host, _, port = args.ping.rpartition(":")
    try:
        session = Session(host, int(port), args.state_dim, args.action_count)
        stats = session.stats()
        session.close()
    except (OSError, ValueError, SessionError) as exc:
        print(f"ping failed: {exc}", file=sys.stderr)
        return 1
    mode = {1: "A", 2: "B"}.get(session.server_mode, "?")
    print(f"ok session={session.session_id} mode={mode} "
          f"experiences_added={stats.get('experiences_added', 0)} "
          f"bytes_in={stats.get('bytes_in', 0)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
