"""Simulation lab for directionally transient random walks in random environments.

Modules:
    env    -- i.i.d. site-kernel families and environment handles
    walk   -- quenched walk simulation (single walks and pairs)
    regen  -- regeneration times, joint regeneration levels, structure tests
    paths  -- rescaled polygonal paths, functionals, path surgery
    stats  -- estimators and large experiments (variance decay, intersections)
    cli    -- command-line entry point
"""

__version__ = "0.1.0"
