"""
副本调度模块
SplitMix64 副本种子派生，以及按固定大小分块、按副本顺序合并的进程池执行
结果与工作进程数无关
"""

import logging
from multiprocessing import Pool

import numpy as np
from tqdm import tqdm

logger = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
DEFAULT_BLOCK_SIZE = 1000

# 不同随机流的盐值，保证计数流与高斯流互不相关
STREAM_SALTS = {
    "counts": 0,
    "gaussian": 0x5851F42D4C957F2D,
    "points": 0x14057B7EF767814F,
}


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def replicate_seed(master_seed, replicate, stream="counts"):
    """seed_r = SplitMix64(master XOR r)，非计数流再与盐值混合一次"""
    seed = splitmix64((int(master_seed) ^ int(replicate)) & MASK64)
    salt = STREAM_SALTS[stream]
    return splitmix64(seed ^ salt) if salt else seed


def replicate_rng(master_seed, replicate, stream="counts"):
    return np.random.default_rng(replicate_seed(master_seed, replicate, stream))


def replicate_rngs(master_seed, start, stop, stream="counts"):
    return [replicate_rng(master_seed, r, stream) for r in range(start, stop)]


def replicate_blocks(replicates, block_size=DEFAULT_BLOCK_SIZE):
    return [
        (start, min(start + block_size, replicates))
        for start in range(0, replicates, block_size)
    ]


def run_replicates(
    worker,
    payload,
    replicates,
    master_seed,
    threads=1,
    block_size=DEFAULT_BLOCK_SIZE,
    progress=False,
    desc="replicates",
):
    """
    把副本 [0, R) 切成固定大小的块交给 worker(payload, master_seed, start, stop)
    worker 返回该块按副本顺序排列的数组，协调端按块顺序拼接
    """
    tasks = [(payload, master_seed, start, stop) for start, stop in replicate_blocks(replicates, block_size)]
    logger.debug("🔧 %s: %d 个副本, %d 块, %d 进程", desc, replicates, len(tasks), threads)

    if threads <= 1 or len(tasks) <= 1:
        results = [worker(task) for task in tqdm(tasks, desc=desc, disable=not progress)]
    else:
        with Pool(processes=threads) as pool:
            # imap 保持提交顺序
            results = list(
                tqdm(pool.imap(worker, tasks), total=len(tasks), desc=desc, disable=not progress)
            )
    return np.concatenate(results) if results else np.zeros(0)
