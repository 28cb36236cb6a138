# incremental_app/numerics.py
"""Núcleo numérico: tensores float64, softmax/entropía cruzada, mapas afines,
gradientes por diferencias finitas y un generador pseudoaleatorio fijo
(splitmix64 + xoshiro256**) para que cada corrida sea reproducible."""
import logging
import math

import numpy as np

logger = logging.getLogger(__name__)

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
PROB_FLOOR = 1e-300

Tensor = np.ndarray


class NumericsError(ValueError):
    """Error en una operación numérica (forma, rango o valores no finitos)"""
    pass


# --- TENSORES ---
def as_tensor(values, shape=None):
    """Convierte a un arreglo float64 contiguo y verifica que sea finito"""
    arr = np.array(values, dtype=np.float64)
    if shape is not None:
        shape = tuple(shape)
        if arr.size != int(np.prod(shape, dtype=np.int64)):
            raise NumericsError(f"No se puede dar forma {shape} a {arr.size} valores")
        arr = arr.reshape(shape)
    ensure_finite(arr)
    return arr


def ensure_finite(arr, what="tensor"):
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{what} contiene valores no finitos (NaN/Inf)")
    return arr


# --- SOFTMAX Y PÉRDIDA ---
def softmax(logits):
    """Softmax de un vector, restando el máximo para evitar desbordes"""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise NumericsError(f"softmax espera un vector, recibió forma {logits.shape}")
    if logits.size == 0:
        raise NumericsError("softmax de un vector vacío")
    ensure_finite(logits, "logits")
    shifted = logits - logits.max()
    exps = np.exp(shifted)
    return exps / exps.sum()


def softmax_rows(logits):
    """Softmax fila por fila de una matriz N x C"""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise NumericsError(f"softmax_rows espera una matriz, recibió forma {logits.shape}")
    if logits.shape[1] == 0:
        raise NumericsError("softmax_rows sin columnas")
    ensure_finite(logits, "logits")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=1, keepdims=True)


def cross_entropy(probs, target):
    """-log(probs[target]) con piso 1e-300 antes del logaritmo"""
    probs = np.asarray(probs, dtype=np.float64)
    target = int(target)
    if not 0 <= target < probs.shape[-1]:
        raise NumericsError(f"Clase objetivo {target} fuera de rango [0, {probs.shape[-1]})")
    p = max(float(probs[target]), PROB_FLOOR)
    # + 0.0 normaliza el -0.0 de -log(1)
    return -math.log(p) + 0.0


def mean_cross_entropy(probs, targets):
    """Entropía cruzada promedio de un lote (probs N x C, targets posiciones)"""
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size and (targets.min() < 0 or targets.max() >= probs.shape[1]):
        raise NumericsError(f"Clases objetivo fuera de rango [0, {probs.shape[1]})")
    picked = np.maximum(probs[np.arange(len(targets)), targets], PROB_FLOOR)
    return float(-np.log(picked).mean()) + 0.0


def one_hot(targets, width):
    out = np.zeros((len(targets), width), dtype=np.float64)
    out[np.arange(len(targets)), np.asarray(targets, dtype=np.int64)] = 1.0
    return out


# --- MAPAS AFINES ---
def affine(x, W, b):
    """y = xᵀW + b; x puede ser un vector o un lote de vectores"""
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or b.ndim != 1:
        raise NumericsError(f"Formas inválidas: W {W.shape}, b {b.shape}")
    if x.shape[-1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise NumericsError(
            f"Formas incompatibles: x {x.shape}, W {W.shape}, b {b.shape}"
        )
    return x @ W + b


# --- GRADIENTE POR DIFERENCIAS FINITAS ---
def finite_diff_grad(f, x, h=1e-4):
    """Diferencias centrales (f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h por coordenada"""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size):
        original = flat_x[i]
        flat_x[i] = original + h
        f_plus = float(f(x))
        flat_x[i] = original - h
        f_minus = float(f(x))
        flat_x[i] = original
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NumericsError(f"f no es finita cerca de la coordenada {i}")
        flat_g[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic, numeric):
    """Error relativo máximo con denominador max(1, |g|)"""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


# --- GENERADOR PSEUDOALEATORIO ---
def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK64


def splitmix64(state):
    """Un paso de splitmix64: devuelve (nuevo_estado, salida)"""
    state = (state + GOLDEN_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def derive_seed(master, tag):
    """Semilla de un componente: splitmix64(master ⊕ tag)"""
    _, out = splitmix64((int(master) ^ int(tag)) & MASK64)
    return out


class Rng:
    """xoshiro256** sembrado con splitmix64.

    Un dueño a la vez: no compartir entre hilos. Los dobles uniformes usan los
    53 bits altos de cada salida de 64 bits.
    """

    def __init__(self, seed):
        self.seed = int(seed) & MASK64
        sm = self.seed
        state = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            state.append(out)
        self._s = state

    def next_u64(self):
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self):
        """Doble uniforme en [0, 1)"""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def randbelow(self, n):
        """Entero uniforme en [0, n) como floor(random() · n)"""
        if n <= 0:
            raise NumericsError(f"randbelow requiere n > 0, recibió {n}")
        return min(int(self.random() * n), n - 1)

    def uniform(self, a, b):
        return a + (b - a) * self.random()

    def gauss(self):
        """Normal estándar por Box–Muller (usa dos uniformes por muestra)"""
        u1 = self.random()
        u2 = self.random()
        radius = math.sqrt(-2.0 * math.log(1.0 - u1))
        return radius * math.cos(2.0 * math.pi * u2)

    def uniform_array(self, shape, low, high):
        """Arreglo fila-mayor de uniformes en [low, high)"""
        size = int(np.prod(shape, dtype=np.int64))
        values = [self.uniform(low, high) for _ in range(size)]
        return np.array(values, dtype=np.float64).reshape(shape)

    def normal_array(self, shape):
        size = int(np.prod(shape, dtype=np.int64))
        values = [self.gauss() for _ in range(size)]
        return np.array(values, dtype=np.float64).reshape(shape)

    def sample(self, n, k):
        """k índices distintos de range(n) (Fisher–Yates parcial)"""
        if k < 0 or k > n:
            raise NumericsError(f"No se pueden tomar {k} elementos distintos de {n}")
        pool = list(range(n))
        for i in range(k):
            j = i + self.randbelow(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def choices(self, n, k):
        """k índices de range(n) con reemplazo"""
        if n <= 0 and k > 0:
            raise NumericsError("No se puede muestrear de una población vacía")
        return [self.randbelow(n) for _ in range(k)]


def rng_shuffle(rng, n):
    """Permutación de 0..n-1 por Fisher–Yates con el generador dado"""
    if n < 0:
        raise NumericsError(f"rng_shuffle requiere n >= 0, recibió {n}")
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.randbelow(i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm
