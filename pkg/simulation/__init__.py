from .dataset import SynthDataset, generate_dataset, load_dataset, write_dataset
from .render import Illumination, render_frame
from .trajectory import AliasPair, SynthConfig, generate_trajectory
