"""scigraph: video snapshot compressive imaging with a dynamic graph enhancer.

Array conventions used throughout the package:

* video cubes are stored frame-major as ``(B, H, W)`` float arrays in [0, 1];
  ``.tns`` files use the on-disk order ``(H, W, B)``;
* feature tensors are channels-last ``(B, H, W, C)``;
* sampling positions are fractional ``(row, col)`` pairs;
* flow fields are ``(H, W, 2)`` with channel 0 horizontal (+x right) and
  channel 1 vertical (+y down) displacement in pixels per frame.
"""

__version__ = "0.1.0"
