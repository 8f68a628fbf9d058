"""Path-integral reduction laboratory for diffusion on principal fiber bundles."""
import jax

jax.config.update("jax_enable_x64", True)

__version__ = "0.1.0"
