use wasm_bindgen::prelude::*;

fn to_js<T: serde::Serialize>(r: Result<T, crate::DemoError>) -> Result<String, JsValue> {
    let value = r.map_err(|e| JsValue::from_str(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub fn em_demo(theta: f64, c: f64, n: u32, seed: u32) -> Result<String, JsValue> {
    to_js(crate::em_demo(theta, c, n as usize, u64::from(seed)))
}

#[wasm_bindgen]
pub fn probit_curve(
    theta: f64,
    c: f64,
    sigma: f64,
    p_star: f64,
    x_min: f64,
    x_max: f64,
    points: u32,
) -> Result<String, JsValue> {
    to_js(crate::probit_curve(theta, c, sigma, p_star, x_min, x_max, points as usize))
}

#[wasm_bindgen]
pub fn emission(c_nox: f64, q_exh: f64, ent: f64, ens: f64) -> Result<String, JsValue> {
    to_js(crate::emission(c_nox, q_exh, ent, ens))
}
