from .commands import experiment, fit, simulate

simulation_commands = (simulate, experiment, fit)
