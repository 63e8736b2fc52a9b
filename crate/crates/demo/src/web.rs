use wasm_bindgen::prelude::*;

fn js(r: super::Result<String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

/// Pools a feature map; see [`super::pool_json`].
#[wasm_bindgen]
pub fn pool(request: &str) -> Result<String, JsValue> {
    js(super::pool_json(request))
}

#[wasm_bindgen]
pub fn ndcg(request: &str) -> Result<String, JsValue> {
    js(super::ndcg_json(request))
}

#[wasm_bindgen]
pub struct Demo2d(super::Demo2d);

#[wasm_bindgen]
impl Demo2d {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, items: u32) -> Result<Demo2d, JsValue> {
        super::Demo2d::new(seed as u64, items as usize).map(Demo2d).map_err(|e| JsValue::from_str(&e))
    }

    pub fn points(&self) -> Result<String, JsValue> {
        js(serde_json::to_string(&self.0.points()).map_err(super::err))
    }

    pub fn mark(&mut self, i: u32, relevant: bool) -> Result<(), JsValue> {
        self.0.mark(i as usize, relevant).map_err(|e| JsValue::from_str(&e))
    }

    pub fn unmark(&mut self, i: u32) {
        self.0.unmark(i as usize);
    }

    pub fn refine(&self, method: &str) -> Result<String, JsValue> {
        js(self.0.refine(method).and_then(|r| serde_json::to_string(&r).map_err(super::err)))
    }
}
