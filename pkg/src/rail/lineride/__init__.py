"""
The module `lineride` implements the line-guided stunt laboratory for a planar
bicycle robot: guideline authoring, trajectory optimisation, the simulated
environment, PPO training and the RAIL stages in `rail.stunts.algos.lineride`.
"""
