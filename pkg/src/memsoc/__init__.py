"""memsoc: a desk-scale memristive SoC pipeline.

Synthesizes labeled 1-D spectra, augments them with a conditional diffusion
model, trains an MLP classifier, compiles it onto simulated 256x256 memristor
crossbar tiles and runs inference on the simulated chip, reporting the
float / quantized / hardware accuracy gap.
"""

__version__ = "0.1.0"
