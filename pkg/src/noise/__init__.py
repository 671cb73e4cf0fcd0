from src.noise.cache import ClassGradCache, LatCache
from src.noise.generators import activation_std, anl_noise, gaussian_noise, inject, lat_noise, sample_r
from src.noise.spec import NoiseKind, NoiseSpec
