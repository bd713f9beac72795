"""Shared Hypothesis settings tiers for the property tests.

Usage:
    from tests.hypothesis_profiles import STANDARD_SETTINGS

    @given(...)
    @STANDARD_SETTINGS
    def test_something(...):
        ...

Tiers:
- STANDARD_SETTINGS: 100 examples - pure arithmetic (polynomials, parsing)
- SIMULATION_SETTINGS: 30 examples - each example runs a small simulation
- QUICK_SETTINGS: 15 examples - each example enumerates realizations
"""

from hypothesis import HealthCheck, settings

# isolated_settings is autouse and function-scoped
SHARED_FIXTURES = [HealthCheck.function_scoped_fixture]

STANDARD_SETTINGS = settings(max_examples=100, deadline=None, suppress_health_check=SHARED_FIXTURES)

# Simulations are vectorized but still allocate per example
SIMULATION_SETTINGS = settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow, *SHARED_FIXTURES])

QUICK_SETTINGS = settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow, *SHARED_FIXTURES])
