//! Negacyclic number theoretic transform over a prime field.
//!
//! The forward transform of a length-n vector is
//! `X[j] = sum_i x[i] * psi^(i*(2j+1)) mod q` with `psi` a primitive 2n-th
//! root of unity, realized as a psi-twist followed by a radix-2 transform
//! with omega = psi^2. Correctness is defined against plain modular
//! arithmetic; an internal Montgomery-multiplication path can be toggled on
//! and must agree bit-for-bit.

use thiserror::Error;

pub const DEFAULT_MODULUS: u64 = 12289;

#[derive(Debug, Error, PartialEq)]
pub enum NttError {
    #[error("length {0} must be a power of two >= 2")]
    BadLength(usize),
    #[error("modulus {0} is not prime")]
    NotPrime(u64),
    #[error("{psi} is not a primitive 2*{n}-th root of unity mod {q}")]
    BadRoot { psi: u64, n: usize, q: u64 },
    #[error("no primitive 2*{n}-th root of unity exists mod {q}")]
    NoRoot { n: usize, q: u64 },
    #[error("coefficient {0} is not a residue mod {1}")]
    OutOfField(u64, u64),
    #[error("input length {got}, transform size {want}")]
    WrongSize { got: usize, want: usize },
}

fn is_prime(q: u64) -> bool {
    if q < 2 {
        return false;
    }
    let mut d = 2u64;
    while d * d <= q {
        if q.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

fn mul_mod(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 * b as u128) % q as u128) as u64
}

fn pow_mod(mut base: u64, mut exp: u64, q: u64) -> u64 {
    let mut acc = 1u64;
    base %= q;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, q);
        }
        base = mul_mod(base, base, q);
        exp >>= 1;
    }
    acc
}

fn inv_mod(a: u64, q: u64) -> u64 {
    // q prime, so a^(q-2) inverts a.
    pow_mod(a, q - 2, q)
}

/// Transform size, modulus, and twiddle root, with an optional Montgomery
/// multiplication path.
#[derive(Debug, Clone)]
pub struct NttParams {
    n: usize,
    q: u64,
    psi: u64,
    use_montgomery: bool,
}

impl NttParams {
    pub fn new(n: usize, q: u64, psi: u64) -> Result<Self, NttError> {
        if n < 2 || !n.is_power_of_two() {
            return Err(NttError::BadLength(n));
        }
        if !is_prime(q) || q >= 1 << 31 {
            return Err(NttError::NotPrime(q));
        }
        let psi = psi % q;
        let ok = pow_mod(psi, 2 * n as u64, q) == 1 && pow_mod(psi, n as u64, q) == q - 1;
        if !ok {
            return Err(NttError::BadRoot { psi, n, q });
        }
        Ok(Self { n, q, psi, use_montgomery: false })
    }

    /// q = 12289 with the smallest primitive 2n-th root.
    pub fn with_default_modulus(n: usize) -> Result<Self, NttError> {
        Self::with_found_root(n, DEFAULT_MODULUS)
    }

    /// Scans for the smallest psi with psi^(2n) = 1 and psi^n = -1.
    pub fn with_found_root(n: usize, q: u64) -> Result<Self, NttError> {
        if n < 2 || !n.is_power_of_two() {
            return Err(NttError::BadLength(n));
        }
        if !is_prime(q) || q >= 1 << 31 {
            return Err(NttError::NotPrime(q));
        }
        if !(q - 1).is_multiple_of(2 * n as u64) {
            return Err(NttError::NoRoot { n, q });
        }
        for candidate in 2..q {
            if pow_mod(candidate, n as u64, q) == q - 1
                && pow_mod(candidate, 2 * n as u64, q) == 1
            {
                return Self::new(n, q, candidate);
            }
        }
        Err(NttError::NoRoot { n, q })
    }

    pub fn with_montgomery(mut self, enabled: bool) -> Self {
        self.use_montgomery = enabled;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn modulus(&self) -> u64 {
        self.q
    }

    pub fn psi(&self) -> u64 {
        self.psi
    }

    fn check_input(&self, x: &[u64]) -> Result<(), NttError> {
        if x.len() != self.n {
            return Err(NttError::WrongSize { got: x.len(), want: self.n });
        }
        if let Some(&bad) = x.iter().find(|&&v| v >= self.q) {
            return Err(NttError::OutOfField(bad, self.q));
        }
        Ok(())
    }

    /// Forward negacyclic transform.
    pub fn ntt(&self, x: &[u64]) -> Result<Vec<u64>, NttError> {
        self.check_input(x)?;
        let q = self.q;
        // Twist by psi^i, then transform with omega = psi^2.
        let mut data: Vec<u64> = Vec::with_capacity(self.n);
        let mut twist = 1u64;
        for &v in x {
            data.push(mul_mod(v, twist, q));
            twist = mul_mod(twist, self.psi, q);
        }
        let omega = mul_mod(self.psi, self.psi, q);
        self.radix2(&mut data, omega);
        Ok(data)
    }

    /// Inverse transform; `intt(ntt(x)) = x` exactly.
    pub fn intt(&self, x: &[u64]) -> Result<Vec<u64>, NttError> {
        self.check_input(x)?;
        let q = self.q;
        let mut data = x.to_vec();
        let omega_inv = inv_mod(mul_mod(self.psi, self.psi, q), q);
        self.radix2(&mut data, omega_inv);
        let n_inv = inv_mod(self.n as u64, q);
        let psi_inv = inv_mod(self.psi, q);
        let mut untwist = 1u64;
        for v in data.iter_mut() {
            *v = mul_mod(mul_mod(*v, n_inv, q), untwist, q);
            untwist = mul_mod(untwist, psi_inv, q);
        }
        Ok(data)
    }

    /// In-place iterative radix-2 transform with the given principal n-th
    /// root; bit-reversal first, natural order out.
    fn radix2(&self, a: &mut [u64], omega: u64) {
        let n = self.n;
        let q = self.q;
        let shift = usize::BITS - n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> shift;
            if i < j {
                a.swap(i, j);
            }
        }
        let mont = self.use_montgomery.then(|| Montgomery::new(q));
        if let Some(m) = &mont {
            for v in a.iter_mut() {
                *v = m.to_mont(*v);
            }
        }
        let mut len = 2;
        while len <= n {
            let w_len = pow_mod(omega, (n / len) as u64, q);
            let w_len = mont.as_ref().map_or(w_len, |m| m.to_mont(w_len));
            let mut start = 0;
            while start < n {
                let mut w = mont.as_ref().map_or(1, |m| m.one());
                for k in start..start + len / 2 {
                    let u = a[k];
                    let v = match &mont {
                        Some(m) => m.mul(a[k + len / 2], w),
                        None => mul_mod(a[k + len / 2], w, q),
                    };
                    a[k] = (u + v) % q;
                    a[k + len / 2] = (u + q - v) % q;
                    w = match &mont {
                        Some(m) => m.mul(w, w_len),
                        None => mul_mod(w, w_len, q),
                    };
                }
                start += len;
            }
            len <<= 1;
        }
        if let Some(m) = &mont {
            for v in a.iter_mut() {
                *v = m.from_mont(*v);
            }
        }
    }
}

/// Montgomery multiplication with R = 2^32 for odd q < 2^31.
struct Montgomery {
    q: u64,
    /// -q^-1 mod 2^32.
    q_neg_inv: u64,
    /// R^2 mod q, for domain entry.
    r2: u64,
}

impl Montgomery {
    fn new(q: u64) -> Self {
        // Newton iteration for the inverse of q modulo 2^32.
        let mut inv = 1u64;
        for _ in 0..5 {
            inv = inv.wrapping_mul(2u64.wrapping_sub(q.wrapping_mul(inv))) & 0xFFFF_FFFF;
        }
        let q_neg_inv = (1u64 << 32).wrapping_sub(inv) & 0xFFFF_FFFF;
        let r = (1u128 << 32) % q as u128;
        let r2 = ((r * r) % q as u128) as u64;
        Self { q, q_neg_inv, r2 }
    }

    fn redc(&self, t: u128) -> u64 {
        let m = (t as u64 & 0xFFFF_FFFF).wrapping_mul(self.q_neg_inv) & 0xFFFF_FFFF;
        let t = ((t + m as u128 * self.q as u128) >> 32) as u64;
        if t >= self.q {
            t - self.q
        } else {
            t
        }
    }

    fn mul(&self, a: u64, b: u64) -> u64 {
        self.redc(a as u128 * b as u128)
    }

    fn to_mont(&self, a: u64) -> u64 {
        self.mul(a, self.r2)
    }

    #[allow(clippy::wrong_self_convention)]
    fn from_mont(&self, a: u64) -> u64 {
        self.redc(a as u128)
    }

    fn one(&self) -> u64 {
        self.to_mont(1)
    }
}
