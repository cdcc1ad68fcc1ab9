//! Benchmark corpus: kernel sources at configurable sizes plus seeded inputs.
//!
//! The default sizes are the ones shipped under `kernels/`. Inputs are drawn
//! from a ChaCha8 stream seeded by `MRNT_SEED` (default 1).

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frontend::{parse_str, FrontendError, MemoryImage};
use crate::ir::Program;

pub const DEFAULT_SEED: u64 = 1;

/// Kernels exercised by the acceptance suite, in report order.
pub const BENCHMARKS: [&str; 6] = ["merge_sort", "spmv", "gemm", "conv1d", "crc", "viterbi"];

/// Every kernel shipped with the corpus.
pub const ALL: [&str; 9] = [
    "vecadd",
    "merge_sort",
    "spmv",
    "gemm",
    "conv1d",
    "crc",
    "viterbi",
    "nest3",
    "selfloop",
];

/// Kernels whose hot loops contain branches.
pub fn control_intensive(name: &str) -> bool {
    matches!(name, "merge_sort" | "crc" | "viterbi")
}

pub fn seed_from_env() -> u64 {
    std::env::var("MRNT_SEED")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_SEED)
}

pub fn vecadd_source(n: usize) -> String {
    format!(
        "kernel vecadd {{
    array A[{n}];
    array B[{n}];
    array C[{n}];
    loop i in 0..{n} {{
        C[i] = A[i] + B[i];
    }}
}}
"
    )
}

/// Bottom-up merge sort of `n` (a power of two) elements.
pub fn merge_sort_source(n: usize) -> String {
    let levels = n.trailing_zeros();
    let half = n / 2;
    format!(
        "// Bottom-up merge sort. x[{n}] is a pad slot read only under a guard.
kernel merge_sort {{
    array x[{pad}];
    array y[{n}];
    loop lg in 0..{levels} {{
        w = 1 << lg;
        loop s in 0..({half} >> lg) {{
            lo = s * (w + w);
            mid = lo + w;
            hi = mid + w;
            i = lo;
            j = mid;
            loop k in lo..hi {{
                va = select(i < mid, x[i], 2147483647);
                vb = select(j < hi, x[j], 2147483647);
                c = vb < va;
                if (vb < va) {{
                    y[k] = vb;
                }} else {{
                    y[k] = va;
                }}
                j = j + c;
                i = i + 1 - c;
            }}
            loop t in lo..hi {{
                x[t] = y[t];
            }}
        }}
    }}
}}
",
        pad = n + 1
    )
}

pub fn gemm_source(n: usize) -> String {
    let sh = n.trailing_zeros();
    format!(
        "kernel gemm {{
    array A[{nn}];
    array B[{nn}];
    array C[{nn}];
    loop i in 0..{n} {{
        ri = i << {sh};
        loop j in 0..{n} {{
            sum = 0;
            loop k in 0..{n} {{
                sum = sum + A[ri + k] * B[(k << {sh}) + j];
            }}
            C[ri + j] = sum;
        }}
    }}
}}
",
        nn = n * n
    )
}

/// CSR sparse matrix-vector product; `nnz` nonzeros in an `n`×`n` matrix.
pub fn spmv_source(n: usize, nnz: usize) -> String {
    format!(
        "kernel spmv {{
    array row_ptr[{rp}];
    array col[{nnz}];
    array val[{nnz}];
    array x[{n}];
    array y[{n}];
    loop i in 0..{n} {{
        sum = 0;
        loop k in row_ptr[i]..row_ptr[i + 1] {{
            sum = sum + val[k] * x[col[k]];
        }}
        y[i] = sum;
    }}
}}
",
        rp = n + 1
    )
}

pub fn conv1d_source(n: usize) -> String {
    format!(
        "kernel conv1d {{
    array x[{n}];
    array w[3];
    array y[{m}];
    w0 = w[0];
    w1 = w[1];
    w2 = w[2];
    loop i in 0..{m} {{
        y[i] = w0 * x[i] + w1 * x[i + 1] + w2 * x[i + 2];
    }}
}}
",
        m = n - 2
    )
}

/// Bitwise CRC-16 style shift register over `n` bytes.
pub fn crc_source(n: usize) -> String {
    format!(
        "kernel crc {{
    array data[{n}];
    array out[{n}];
    crc = 65535;
    loop p in 0..{n} {{
        crc = crc ^ data[p];
        loop b in 0..8 {{
            if (crc & 1) {{
                crc = (crc >> 1) ^ 40961;
            }} else {{
                crc = crc >> 1;
            }}
        }}
        out[p] = crc;
    }}
}}
"
    )
}

/// Four-state min-sum trellis over `t` steps.
pub fn viterbi_source(t: usize) -> String {
    format!(
        "kernel viterbi {{
    array emit[{e}];
    array trans[16];
    array score[4];
    array next[4];
    array best[{t}];
    loop t in 0..{t} {{
        loop s in 0..4 {{
            m = 1000000000;
            loop p in 0..4 {{
                m = min(m, score[p] + trans[(p << 2) + s]);
            }}
            next[s] = m + emit[(t << 2) + s];
        }}
        loop q in 0..4 {{
            score[q] = next[q];
        }}
        best[t] = min(min(score[0], score[1]), min(score[2], score[3]));
    }}
}}
",
        e = t * 4
    )
}

/// Three-level imperfect nest with work at every level.
pub fn nest3_source() -> String {
    "kernel nest3 {
    array a[512];
    array b[64];
    array c[8];
    loop i in 0..8 {
        acc = b[i] * 3;
        loop j in 0..8 {
            t = b[(i << 3) + j] + i;
            loop k in 0..8 {
                a[(i << 6) + (j << 3) + k] = t * k + acc;
            }
            acc = acc + t;
        }
        c[i] = acc;
    }
}
"
    .to_string()
}

/// A loop whose body is one self-dependent add.
pub fn selfloop_source(n: usize) -> String {
    format!(
        "kernel selfloop {{
    array out[1];
    s = 0;
    loop i in 0..{n} {{
        s = s + 1;
    }}
    out[0] = s;
}}
"
    )
}

pub const SPMV_N: usize = 64;
/// 10% density of a 64×64 matrix.
pub const SPMV_NNZ: usize = 410;

/// Source text of a corpus kernel at its default size.
pub fn source(name: &str) -> Option<String> {
    Some(match name {
        "vecadd" => vecadd_source(8),
        "merge_sort" => merge_sort_source(256),
        "spmv" => spmv_source(SPMV_N, SPMV_NNZ),
        "gemm" => gemm_source(16),
        "conv1d" => conv1d_source(1024),
        "crc" => crc_source(64),
        "viterbi" => viterbi_source(64),
        "nest3" => nest3_source(),
        "selfloop" => selfloop_source(64),
        _ => return None,
    })
}

pub fn program(name: &str) -> Result<Program, FrontendError> {
    let src =
        source(name).ok_or_else(|| FrontendError::Memory(format!("no corpus kernel `{name}`")))?;
    parse_str(&src)
}

fn fill(rng: &mut ChaCha8Rng, len: usize, lo: i32, hi: i32) -> Vec<i32> {
    (0..len).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Uniform values in `0..100` for every array.
pub fn random_memory(program: &Program, seed: u64) -> MemoryImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = MemoryImage::zeroed(program);
    for d in &program.memories {
        m.set(&d.name, fill(&mut rng, d.len, 0, 100));
    }
    m
}

/// A well-formed CSR structure with exactly `nnz` nonzeros.
pub fn csr_pattern(rng: &mut ChaCha8Rng, n: usize, nnz: usize) -> (Vec<i32>, Vec<i32>) {
    let mut cells = sample(rng, n * n, nnz).into_vec();
    cells.sort_unstable();
    let mut row_ptr = vec![0i32; n + 1];
    let mut col = Vec::with_capacity(nnz);
    for c in cells {
        row_ptr[c / n + 1] += 1;
        col.push((c % n) as i32);
    }
    for r in 0..n {
        row_ptr[r + 1] += row_ptr[r];
    }
    (row_ptr, col)
}

/// Inputs for a corpus kernel. Unknown programs get [`random_memory`].
pub fn memory(program: &Program, seed: u64) -> MemoryImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = MemoryImage::zeroed(program);
    let len = |n: &str| {
        program
            .memories
            .iter()
            .find(|d| d.name == n)
            .map_or(0, |d| d.len)
    };
    match program.name.as_str() {
        "merge_sort" => {
            let n = len("y");
            let mut x = fill(&mut rng, n, 0, 10_000);
            x.push(0);
            m.set("x", x);
        }
        "spmv" => {
            let n = len("x");
            let nnz = len("val");
            let (row_ptr, col) = csr_pattern(&mut rng, n, nnz);
            m.set("row_ptr", row_ptr);
            m.set("col", col);
            m.set("val", fill(&mut rng, nnz, -50, 50));
            m.set("x", fill(&mut rng, n, -50, 50));
        }
        "gemm" => {
            let n = len("A");
            m.set("A", fill(&mut rng, n, -20, 20));
            m.set("B", fill(&mut rng, n, -20, 20));
        }
        "conv1d" => {
            m.set("x", fill(&mut rng, len("x"), -100, 100));
            m.set("w", fill(&mut rng, 3, -8, 8));
        }
        "crc" => m.set("data", fill(&mut rng, len("data"), 0, 256)),
        "viterbi" => {
            m.set("emit", fill(&mut rng, len("emit"), 0, 100));
            m.set("trans", fill(&mut rng, 16, 0, 100));
            m.set("score", fill(&mut rng, 4, 0, 100));
        }
        "vecadd" => {
            m.set("A", fill(&mut rng, len("A"), -1000, 1000));
            m.set("B", fill(&mut rng, len("B"), -1000, 1000));
        }
        "nest3" => m.set("b", fill(&mut rng, len("b"), -100, 100)),
        "selfloop" => {}
        _ => return random_memory(program, seed),
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csr_is_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (rp, col) = csr_pattern(&mut rng, 64, 410);
        assert_eq!(rp[0], 0);
        assert_eq!(rp[64], 410);
        assert!(rp.windows(2).all(|w| w[0] <= w[1]));
        assert!(col.iter().all(|&c| (0..64).contains(&c)));
    }

    #[test]
    fn every_kernel_parses() {
        for name in ALL {
            let p = program(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(p.name, name);
            memory(&p, 1).check(&p).unwrap();
        }
    }
}
