use super::{Matrix, ParamId, ParamStore};

/// Stochastic gradient descent with heavy-ball momentum and L2 weight decay,
/// using the update `v ← μ·v + (g + λ·w)`, `w ← w − η·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Matrix>>,
}

impl Sgd {
    pub fn new(store: &ParamStore, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: vec![None; store.len()],
        }
    }

    /// Applies one update. Trainable parameters missing from `grads` are treated
    /// as having zero data gradient (weight decay still applies).
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Matrix)], lr: f64) {
        let mut by_id: Vec<Option<&Matrix>> = vec![None; store.len()];
        for (id, g) in grads {
            by_id[id.index()] = Some(g);
        }
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            if !store.is_trainable(id) {
                continue;
            }
            let w = store.value(id);
            let mut d = match by_id[id.index()] {
                Some(g) => g.clone(),
                None => Matrix::zeros(w.rows(), w.cols()),
            };
            for (dv, wv) in d.data_mut().iter_mut().zip(w.data()) {
                *dv += self.weight_decay * wv;
            }
            let v = match self.velocity[id.index()].take() {
                Some(mut v) => {
                    for (vv, dv) in v.data_mut().iter_mut().zip(d.data()) {
                        *vv = self.momentum * *vv + dv;
                    }
                    v
                }
                None => d,
            };
            for (wv, vv) in store.value_mut(id).data_mut().iter_mut().zip(v.data()) {
                *wv -= lr * vv;
            }
            self.velocity[id.index()] = Some(v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_weight_decay_is_geometric_without_momentum() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Matrix::from_vec(1, 2, vec![3.0, -4.0]), true);
        let mut opt = Sgd::new(&store, 0.0, 0.1);
        for _ in 0..5 {
            opt.step(&mut store, &[], 0.5);
        }
        let expect = 0.95f64.powi(5);
        assert!((store.value(id).get(0, 0) - 3.0 * expect).abs() < 1e-12);
        assert!((store.value(id).get(0, 1) + 4.0 * expect).abs() < 1e-12);
    }

    #[test]
    fn momentum_accumulates() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Matrix::scalar(0.0), true);
        let mut opt = Sgd::new(&store, 0.9, 0.0);
        let g = vec![(id, Matrix::scalar(1.0))];
        opt.step(&mut store, &g, 1.0);
        opt.step(&mut store, &g, 1.0);
        assert!((store.value(id).item() + 2.9).abs() < 1e-12);
    }
}
