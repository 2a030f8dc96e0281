//! The reverse-mode tape in isolation: record a computation, run the
//! backward sweep, and see what stop_gradient does to derivative flow.
//!
//! Run with: cargo run --example autodiff_basics

use gffm::autodiff::{grad_check, Array, Tape};

fn main() -> gffm::Result<()> {
    // d/dx of x^2 at x = 3
    let mut tape = Tape::new();
    let x = tape.param(Array::scalar(3.0));
    let y = tape.mul(x, x);
    let grads = tape.backward(y);
    println!("d(x^2)/dx at 3        = {}", grads.wrt(x).as_scalar());

    // sum(W v) through a matrix-vector product
    let mut tape = Tape::new();
    let w = tape.param(Array::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
    let v = tape.param(Array::vector(vec![1.0, -1.0]));
    let wv = tape.matvec(w, v);
    let s = tape.sum(wv);
    let grads = tape.backward(s);
    println!("d sum(Wv)/dW          = {:?}", grads.wrt(w).data());
    println!("d sum(Wv)/dv          = {:?}", grads.wrt(v).data());

    // stop_gradient: value passes through, derivatives do not.
    // root = sg(x) * x behaves like (const 3) * x, so the gradient is 3,
    // not the 6 that d(x^2)/dx would give.
    let mut tape = Tape::new();
    let x = tape.param(Array::scalar(3.0));
    let frozen = tape.stop_gradient(x);
    let y = tape.mul(frozen, x);
    let grads = tape.backward(y);
    println!("value of sg(x) * x    = {}", tape.value(y).as_scalar());
    println!("d(sg(x) * x)/dx       = {}", grads.wrt(x).as_scalar());

    // and a path that is entirely blocked
    let mut tape = Tape::new();
    let x = tape.param(Array::scalar(3.0));
    let y = tape.mul(x, x);
    let blocked = tape.stop_gradient(y);
    let grads = tape.backward(blocked);
    println!("d sg(x^2)/dx          = {}", grads.wrt(x).as_scalar());

    // central-difference verification of an analytic gradient
    let err = grad_check(
        |t, ps| {
            let h = t.tanh(ps[0]);
            t.sq_l2(h)
        },
        &[Array::vector(vec![0.3, -1.2, 0.8])],
        1e-5,
    )?;
    println!("gradcheck ||tanh(x)||^2 max rel err = {err:.3e}");
    Ok(())
}
