use crate::scalar::Real;

/// Solve `a · x = b` in place by LU factorization with partial pivoting.
///
/// `a` is row-major `n × n` and is overwritten by its factors; `b` receives
/// the solution. Returns `false` when a pivot underflows (singular system).
pub fn lu_solve<T: Real>(a: &mut [T], b: &mut [T], n: usize) -> bool {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let tiny = T::epsilon() * T::lit(1e3);
    for k in 0..n {
        let (p, pivot) =
            (k..n)
                .map(|i| (i, a[i * n + k].abs()))
                .fold(
                    (k, T::zero()),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if !(pivot > tiny) {
            return false;
        }
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            b.swap(k, p);
        }
        let akk = a[k * n + k];
        for i in k + 1..n {
            let f = a[i * n + k] / akk;
            if f == T::zero() {
                continue;
            }
            a[i * n + k] = f;
            for j in k + 1..n {
                let v = a[k * n + j];
                a[i * n + j] = a[i * n + j] - f * v;
            }
            b[i] = b[i] - f * b[k];
        }
    }
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s = s - a[k * n + j] * b[j];
        }
        b[k] = s / a[k * n + k];
    }
    b.iter().all(|v| v.is_finite())
}
