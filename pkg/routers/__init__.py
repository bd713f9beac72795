# Routers package: one module per subcommand
from . import check_router, monomial_router, payments_router, simulate_router, sweep_router

ROUTERS = [simulate_router, check_router, sweep_router, payments_router, monomial_router]

__all__ = ["ROUTERS"]
