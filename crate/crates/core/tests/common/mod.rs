#![allow(dead_code)]
pub mod oracles;

use std::path::Path;

use gpcn::nn::{ParamStore, Session};
use gpcn::rng::rng_from_seed;
use gpcn::{Tensor, Var};

pub fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape.to_vec(), 1.0, &mut rng_from_seed(seed))
}

/// Adds N(0, std^2) noise to every parameter so zero-initialized projections
/// stop hiding the paths behind them.
pub fn jitter(store: &mut ParamStore, std: f64, seed: u64) {
    let mut rng = rng_from_seed(seed);
    for p in store.values_mut() {
        let n = Tensor::randn(p.shape().to_vec(), std, &mut rng);
        *p = p.zip_map(&n, |a, b| a + b).unwrap();
    }
}

/// Scalar probe: sum of the output weighted by fixed pseudo-random values.
pub fn probe(s: &mut Session, y: Var, seed: u64) -> gpcn::Result<Var> {
    let w = s.tape.constant(randn(s.tape.shape(y), seed));
    let p = s.tape.mul(y, w)?;
    Ok(s.tape.sum(p))
}

#[derive(Debug)]
pub struct ParamCheck {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

/// Central differences over every parameter and input entry of `f`, compared
/// with the tape's gradients. Relative error uses a floor of 1e-3 times the
/// largest analytic magnitude of the tensor being checked.
pub fn param_gradcheck<F>(store: &mut ParamStore, inputs: &[Tensor], h: f64, f: F) -> ParamCheck
where
    F: Fn(&mut Session, &[Var]) -> gpcn::Result<Var>,
{
    let (param_grads, input_grads) = {
        let mut s = Session::new(store, true);
        let vars: Vec<Var> = inputs.iter().map(|t| s.tape.leaf(t.clone(), true)).collect();
        let root = f(&mut s, &vars).unwrap();
        let g = s.tape.backward(root).unwrap();
        let ig: Vec<Tensor> = vars
            .iter()
            .zip(inputs)
            .map(|(v, t)| g.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect();
        (s.param_grads(&g), ig)
    };
    let eval = |store: &ParamStore, inputs: &[Tensor]| -> f64 {
        let mut s = Session::new(store, false);
        let vars: Vec<Var> = inputs.iter().map(|t| s.input(t.clone())).collect();
        let r = f(&mut s, &vars).unwrap();
        s.tape.value(r).data()[0]
    };
    let mut out = ParamCheck { max_rel_err: 0.0, worst: String::new(), checked: 0 };
    let mut record = |label: String, a: &Tensor, k: usize, numeric: f64| {
        let floor = (1e-3 * a.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))).max(1e-10);
        let an = a.data()[k];
        let rel = (an - numeric).abs() / an.abs().max(numeric.abs()).max(floor);
        out.checked += 1;
        if rel > out.max_rel_err {
            out.max_rel_err = rel;
            out.worst = format!("{label}[{k}] analytic {an:e} numeric {numeric:e}");
        }
    };
    let ids: Vec<_> = store.ids().collect();
    for (p, id) in ids.into_iter().enumerate() {
        let name = store.name(id).to_string();
        for k in 0..store.get(id).numel() {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + h;
            let up = eval(store, inputs);
            store.get_mut(id).data_mut()[k] = orig - h;
            let down = eval(store, inputs);
            store.get_mut(id).data_mut()[k] = orig;
            record(name.clone(), &param_grads[p], k, (up - down) / (2.0 * h));
        }
    }
    let mut work = inputs.to_vec();
    for i in 0..inputs.len() {
        for k in 0..inputs[i].numel() {
            let orig = inputs[i].data()[k];
            work[i].data_mut()[k] = orig + h;
            let up = eval(store, &work);
            work[i].data_mut()[k] = orig - h;
            let down = eval(store, &work);
            work[i].data_mut()[k] = orig;
            record(format!("input{i}"), &input_grads[i], k, (up - down) / (2.0 * h));
        }
    }
    out
}

/// Byte-for-byte comparison of two directory trees.
pub fn assert_same_tree(a: &Path, b: &Path) {
    let mut files_a = list_files(a);
    let mut files_b = list_files(b);
    files_a.sort();
    files_b.sort();
    assert_eq!(files_a, files_b, "file sets differ between {} and {}", a.display(), b.display());
    for rel in files_a {
        let x = std::fs::read(a.join(&rel)).unwrap();
        let y = std::fs::read(b.join(&rel)).unwrap();
        assert!(x == y, "{} differs", rel.display());
    }
}

pub fn list_files(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out
}
