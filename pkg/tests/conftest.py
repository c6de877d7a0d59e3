from hypothesis import HealthCheck, settings

# numba kernels compile on first call; a per-example deadline would flag that
settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")
