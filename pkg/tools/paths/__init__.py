from .commands import bottleneck, order, surgery

path_commands = (bottleneck, order, surgery)
