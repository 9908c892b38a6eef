from .commands import exact, verify

verification_commands = (exact, verify)
