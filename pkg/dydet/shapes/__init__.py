from .scene import SHAPE_NAMES, SceneConfig, SyntheticScene, generate_scene
from .dataset import Dataset, DatasetError, generate_dataset, load_dataset, write_dataset
