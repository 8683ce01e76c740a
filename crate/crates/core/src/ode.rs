//! Fixed-step classical Runge-Kutta kernel shared by the nonlinear and the
//! linearized flows.

use crate::real::Real;

/// Scratch buffers for allocation-free RK4 steps.
#[derive(Debug, Clone)]
pub struct Rk4Workspace<T> {
    k1: Vec<T>,
    k2: Vec<T>,
    k3: Vec<T>,
    k4: Vec<T>,
    tmp: Vec<T>,
}

impl<T: Real> Rk4Workspace<T> {
    pub fn new(n: usize) -> Self {
        Self {
            k1: vec![T::zero(); n],
            k2: vec![T::zero(); n],
            k3: vec![T::zero(); n],
            k4: vec![T::zero(); n],
            tmp: vec![T::zero(); n],
        }
    }

    fn resize(&mut self, n: usize) {
        if self.k1.len() != n {
            for v in [&mut self.k1, &mut self.k2, &mut self.k3, &mut self.k4, &mut self.tmp] {
                v.resize(n, T::zero());
            }
        }
    }
}

/// One RK4 step of the autonomous system `y' = f(y)`, in place.
pub fn rk4_step_in_place<T, F>(y: &mut [T], dt: T, ws: &mut Rk4Workspace<T>, mut f: F)
where
    T: Real,
    F: FnMut(&[T], &mut [T]),
{
    let n = y.len();
    ws.resize(n);
    let half = T::lit(0.5) * dt;
    let Rk4Workspace { k1, k2, k3, k4, tmp } = ws;

    f(y, k1);
    for i in 0..n {
        tmp[i] = y[i] + half * k1[i];
    }
    f(tmp, k2);
    for i in 0..n {
        tmp[i] = y[i] + half * k2[i];
    }
    f(tmp, k3);
    for i in 0..n {
        tmp[i] = y[i] + dt * k3[i];
    }
    f(tmp, k4);

    let sixth = dt / T::lit(6.0);
    let two = T::lit(2.0);
    for i in 0..n {
        y[i] += sixth * (k1[i] + two * (k2[i] + k3[i]) + k4[i]);
    }
}

/// Number of steps and the size of the last one needed to cover `t_end`.
pub(crate) fn step_plan<T: Real>(t_end: T, dt: T) -> (usize, T) {
    if t_end <= T::zero() {
        return (0, dt);
    }
    let ratio = t_end / dt;
    let mut n = ratio.round();
    if (ratio - n).abs() > T::lit(1e-9) * ratio.max(T::one()) {
        n = ratio.ceil();
    }
    let n = n.to_usize().expect("finite step count").max(1);
    let last = t_end - dt * T::from_usize_lossy(n - 1);
    (n, last)
}
