use avgls_core::problems::fmt_f64;
use avgls_core::IterationTrace;

/// Step lengths above this count as long accepted steps.
const LONG_STEP: f64 = 5.0;

/// Run statistics aggregated from a trace.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub iterations: usize,
    pub wall_time_seconds: f64,
    pub final_res_norm: f64,
    /// Iterations that accepted a step longer than the nominal one.
    pub ls_accept_count: usize,
    pub ls_accept_alpha_gt5_count: usize,
    pub total_s2_evals: usize,
    pub total_s1_evals: usize,
}

impl RunSummary {
    pub fn from_trace(trace: &IterationTrace, wall_time_seconds: f64) -> Self {
        RunSummary {
            iterations: trace.iterations(),
            wall_time_seconds,
            final_res_norm: trace.final_res_norm,
            ls_accept_count: trace.accepted_searches(),
            ls_accept_alpha_gt5_count: trace
                .records
                .iter()
                .filter(|r| r.alpha_k > trace.nominal_step && r.alpha_k > LONG_STEP)
                .count(),
            total_s2_evals: trace.total_s2_evals(),
            total_s1_evals: trace.total_s1_evals(),
        }
    }

    pub fn to_json(&self) -> JsonObject {
        let mut o = JsonObject::default();
        o.usize("iterations", self.iterations);
        o.f64("wall_time_seconds", self.wall_time_seconds);
        o.f64("final_res_norm", self.final_res_norm);
        o.usize("ls_accept_count", self.ls_accept_count);
        o.usize("ls_accept_alpha_gt5_count", self.ls_accept_alpha_gt5_count);
        o.usize("total_s2_evals", self.total_s2_evals);
        o.usize("total_s1_evals", self.total_s1_evals);
        o
    }
}

/// A number with 17 significant digits. Non-finite values become `null`
/// since JSON has no spelling for them.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        fmt_f64(v)
    } else {
        "null".into()
    }
}

/// Ordered JSON object builder. serde_json prints the shortest round-trip
/// form of a float, so numbers are formatted here instead.
#[derive(Default)]
pub struct JsonObject {
    fields: Vec<(String, String)>,
}

impl JsonObject {
    pub fn raw(&mut self, key: &str, value: String) {
        self.fields.push((key.to_owned(), value));
    }

    pub fn f64(&mut self, key: &str, v: f64) {
        self.raw(key, num(v));
    }

    pub fn usize(&mut self, key: &str, v: usize) {
        self.raw(key, v.to_string());
    }

    pub fn str(&mut self, key: &str, v: &str) {
        self.raw(key, format!("{v:?}"));
    }

    pub fn f64s(&mut self, key: &str, v: &[f64]) {
        let items: Vec<String> = v.iter().map(|x| num(*x)).collect();
        self.raw(key, format!("[{}]", items.join(", ")));
    }

    pub fn render(&self) -> String {
        let body: Vec<String> = self
            .fields
            .iter()
            .map(|(k, v)| format!("  {k:?}: {}", v.replace('\n', "\n  ")))
            .collect();
        format!("{{\n{}\n}}", body.join(",\n"))
    }
}
