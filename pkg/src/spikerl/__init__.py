"""Population-coded spiking actors trained with TD3, data-parallel collectives,
emulated mixed precision and GPS-UP energy reporting."""

__version__ = "0.1.0"
