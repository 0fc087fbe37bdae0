"""Write the sample target pair used in the README's command-line walkthrough."""
from pathlib import Path

from unca import imageio, textures

here = Path(__file__).parent / "samples"
here.mkdir(exist_ok=True)
imageio.write_png(here / "stripes.png", textures.stripes(128, 16))
imageio.write_png(here / "dots.png", textures.dots(128, 16, 4.0))
print("wrote", *sorted(p.name for p in here.glob("*.png")))
