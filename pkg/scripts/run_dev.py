#!/usr/bin/env python3
"""
Development server for the evsched API

Serves the app with auto-reload on the package sources. With --check it first
posts a one-EV valley fill to /schedule and refuses to start unless the answer
is the known optimum.
"""

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

SRC = Path(__file__).resolve().parent.parent / "src"

# One EV, 3 kWh over four slots: fills the 2 and 3 kW slots up to 4 kW.
CHECK_REQUEST = {
    "T": 4,
    "vehicles": [{"id": "ev-1", "slots": [1, 2, 3, 4], "rate_cap_kw": 2.0, "energy_need_kwh": 3.0}],
    "base_load": [5.0, 3.0, 2.0, 4.0],
    "solver": "fw",
}
CHECK_COST = 36.5


def import_app():
    """Import the API module, from src/ when the package is not installed."""
    try:
        from evsched.api import main as api
    except ImportError:
        sys.path.insert(0, str(SRC))
        from evsched.api import main as api
    return api


def check_schedule(api) -> bool:
    """Schedule CHECK_REQUEST through the app and compare with the hand-computed cost."""
    from fastapi.testclient import TestClient

    response = TestClient(api.app).post("/schedule", json=CHECK_REQUEST)
    if response.status_code != 200:
        print(f"✗ /schedule answered {response.status_code}: {response.text}")
        return False
    data = response.json()
    ok = data["converged"] and abs(data["cost"] - CHECK_COST) <= 1e-3 * CHECK_COST
    mark = "✓" if ok else "✗"
    print(f"{mark} Valley fill check: cost {data['cost']:.6g} (expected {CHECK_COST}), profile {data['profiles']['ev-1']}")
    return ok


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Run the evsched API for development")
    parser.add_argument("--host", default="0.0.0.0", help="Bind address (default: 0.0.0.0)")
    parser.add_argument("--port", type=int, default=3000, help="Port (default: 3000)")
    parser.add_argument("--no-reload", dest="reload", action="store_false", help="Disable auto-reload")
    parser.add_argument("--log-level", default="info", choices=("debug", "info", "warning", "error"))
    parser.add_argument("--check", action="store_true", help="Schedule a known instance before serving")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    api = import_app()
    if args.check and not check_schedule(api):
        return 1

    print("Starting evsched API development server...")
    print(f"API will be available at: http://localhost:{args.port}")
    print(f"API documentation: http://localhost:{args.port}/docs")
    print("Press CTRL+C to stop the server")
    api.serve(host=args.host, port=args.port, reload=args.reload, log_level=args.log_level)
    return 0


if __name__ == "__main__":
    sys.exit(main())
