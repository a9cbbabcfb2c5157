import yaml
from slflab import home
import os

_AVAILABLE_DATA = ['madrid', 'desk20x15', 'manhattan']


class DataNotFound(Exception):
    pass


def get_layout(name: str) -> dict:
    """Retrieve a builtin map layout

    Parameters
    ----------
    name : str
        Name of the data directory of slflab

    Returns
    -------
    dict
        A dictionary with keys:

        * px, py: pixel counts along x and y
        * pixel_size: meters per pixel edge
        * origin: world coordinate of the center of pixel (1, 1)
        * ground_truth: whether the layout carries an SLF (False for grid-only layouts)
        * background: slf and road flag of pixels not covered by any block
        * blocks: list of rectangles with keys name, row, col, height, width, slf, road.
          row and col are the 1-based indices of the top-left pixel.

    Raises
    ------
    DataNotFound
        slflab does not contain the data.
    """

    path = home.layout_file(name) if name else None
    if path is None or not os.path.isfile(path):
        raise DataNotFound(f"slflab data does not have '{name}' layout. "
                           f"Choose from: {_AVAILABLE_DATA}")

    with open(path, 'r') as f:
        layout = yaml.safe_load(f)

    layout.setdefault('origin', [0.0, 0.0])
    layout.setdefault('ground_truth', True)
    layout.setdefault('background', {'slf': 0.0, 'road': True})
    layout.setdefault('blocks', [])
    layout['name'] = name
    return layout
