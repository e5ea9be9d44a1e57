//! Central-difference checks of every differentiable graph operation, shared
//! by unit and acceptance tests.
#![allow(dead_code)]

use super::gradcheck::{check_inputs, random_tensor};

/// `(op, max relative error)` for each operation at one seed.
pub fn op_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let s = seed * 100;
    vec![
        ("conv1d", check_inputs(
            &[random_tensor(vec![2, 2, 23], s + 1), random_tensor(vec![3, 2, 5], s + 2), random_tensor(vec![3], s + 3), random_tensor(vec![2, 3, 7], s + 4)],
            |g, v| {
                let y = g.conv1d(v[0], v[1], v[2], 3)?;
                let t = g.tanh(y)?;
                let p = g.mul(t, v[3])?;
                g.sum(p)
            }, 40, s)),
        ("lrelu", check_inputs(&[random_tensor(vec![10], s + 5)], |g, v| {
            let y = g.lrelu(v[0], 0.1)?;
            let y2 = g.mul(y, y)?;
            g.sum(y2)
        }, 10, s)),
        ("softmax", check_inputs(&[random_tensor(vec![2, 5], s + 6), random_tensor(vec![2, 5], s + 7)], |g, v| {
            let y = g.softmax(v[0])?;
            let p = g.mul(y, v[1])?;
            g.sum(p)
        }, 10, s)),
        ("tanh_sigmoid", check_inputs(&[random_tensor(vec![6], s + 8)], |g, v| {
            let a = g.tanh(v[0])?;
            let b = g.sigmoid(v[0])?;
            let p = g.mul(a, b)?;
            g.sum(p)
        }, 6, s)),
        ("add_sub_scale_row", check_inputs(&[random_tensor(vec![3, 4], s + 9), random_tensor(vec![4], s + 10), random_tensor(vec![3, 4], s + 11)], |g, v| {
            let a = g.add_row(v[0], v[1])?;
            let b = g.sub(a, v[2])?;
            let c = g.scale(b, 0.7)?;
            let d = g.add(c, v[0])?;
            let e = g.mul(d, d)?;
            g.sum(e)
        }, 12, s)),
        ("matmul", check_inputs(&[random_tensor(vec![3, 4], s + 12), random_tensor(vec![4, 2], s + 13), random_tensor(vec![5, 2], s + 14)], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            let z = g.matmul_bt(y, v[2])?;
            let t = g.tanh(z)?;
            g.sum(t)
        }, 12, s)),
        ("matmul_vectors", check_inputs(&[random_tensor(vec![3, 4], s + 21), random_tensor(vec![4], s + 22), random_tensor(vec![3], s + 23)], |g, v| {
            let col = g.matmul_bt(v[0], v[1])?;
            let flat = g.reshape(col, vec![3])?;
            let t = g.tanh(flat)?;
            let ctx = g.matmul(t, v[0])?;
            let w = g.matmul(v[2], v[0])?;
            let u = g.mul(ctx, w)?;
            g.sum(u)
        }, 12, s)),
        ("slice_index_stack_select", check_inputs(&[random_tensor(vec![4, 6], s + 15)], |g, v| {
            let a = g.slice(v[0], 1, 3)?;
            let r0 = g.index(a, 2)?;
            let r1 = g.index(a, 0)?;
            let st = g.stack(&[r0, r1, r0])?;
            let sel = g.select_rows(st, &[0, 2])?;
            let flat = g.reshape(sel, vec![6])?;
            let t = g.tanh(flat)?;
            let t2 = g.mul(t, flat)?;
            g.sum(t2)
        }, 24, s)),
        ("mean_embedding", check_inputs(&[random_tensor(vec![5, 3], s + 16), random_tensor(vec![3, 4], s + 17)], |g, v| {
            let e = g.embedding(v[0], 2)?;
            let m = g.mean_last(v[1])?;
            let p = g.mul(e, m)?;
            let q = g.mul(p, p)?;
            g.sum(q)
        }, 15, s)),
        ("mse", check_inputs(&[random_tensor(vec![3, 4], s + 18), random_tensor(vec![3, 4], s + 19)], |g, v| g.mse(v[0], v[1]), 12, s)),
        ("cross_entropy", check_inputs(&[random_tensor(vec![3, 6], s + 20)], |g, v| g.cross_entropy(v[0], &[1, 5, 0]), 18, s)),
    ]
}
