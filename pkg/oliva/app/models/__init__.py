from .dataset import INTERCEPT, Dataset

__all__ = ['Dataset', 'INTERCEPT']
