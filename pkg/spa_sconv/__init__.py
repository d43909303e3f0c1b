from spa_sconv.padding import PaddedMap, pad, pad_index_map, zero_pad
from spa_sconv.layer import SpaConvLayer, flip_kernel, spa_sconv
