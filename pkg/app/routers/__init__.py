"""HTTP routers of the lab API."""
