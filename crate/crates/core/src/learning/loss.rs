/// Binary cross-entropy on a logit, returned with its derivative.
///
/// `loss = max(z, 0) − z·y + ln(1 + e^{−|z|})`, `dloss/dz = sigmoid(z) − y`.
pub fn bce_loss(logit: f64, label: u8) -> (f64, f64) {
    let y = f64::from(label);
    let loss = logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p();
    (loss, sigmoid(logit) - y)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
