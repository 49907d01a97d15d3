use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SimError;
use crate::trace::{Button, InputState};

/// Parses an input script: one frame per line, whitespace-separated button
/// names, `-` or an empty line for no input. `#` starts a comment line.
pub fn parse_input_script(text: &str) -> Result<Vec<InputState>, SimError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        let mut s = InputState::NONE;
        for tok in line.split_whitespace().filter(|t| *t != "-") {
            let b: Button = tok
                .parse()
                .map_err(|e| SimError::Argument(format!("input script line {}: {e}", i + 1)))?;
            s.press(b);
        }
        out.push(s);
    }
    Ok(out)
}

pub fn format_input_script(inputs: &[InputState]) -> String {
    let mut out = String::new();
    for i in inputs {
        if i.is_empty() {
            out.push('-');
        } else {
            let names: Vec<&str> = i.buttons().map(Button::as_str).collect();
            out.push_str(&names.join(" "));
        }
        out.push('\n');
    }
    out
}

/// Random-walk play: a held direction (none, left or right) that changes
/// every 8–48 frames, plus jump presses of 2–12 frames.
pub fn random_walk_inputs(seed: u64, frames: usize) -> Vec<InputState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(frames);
    let mut dir: Option<Button> = None;
    let mut dir_left = 0u32;
    let mut jump_left = 0u32;
    for _ in 0..frames {
        if dir_left == 0 {
            dir = match rng.gen_range(0..3) {
                0 => None,
                1 => Some(Button::L),
                _ => Some(Button::R),
            };
            dir_left = rng.gen_range(8..=48);
        }
        dir_left -= 1;
        if jump_left == 0 && rng.gen_bool(0.04) {
            jump_left = rng.gen_range(2..=12);
        }
        let mut s = InputState::NONE;
        if let Some(b) = dir {
            s.press(b);
        }
        if jump_left > 0 {
            s.press(Button::A);
            jump_left -= 1;
        }
        out.push(s);
    }
    out
}

/// Parses the CLI input spec: `script:<path>` or `random:<seed>:<n>`.
pub fn inputs_from_spec(spec: &str) -> Result<Vec<InputState>, SimError> {
    if let Some(path) = spec.strip_prefix("script:") {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Argument(format!("{path}: {e}")))?;
        return parse_input_script(&text);
    }
    if let Some(rest) = spec.strip_prefix("random:") {
        let (seed, n) = rest
            .split_once(':')
            .ok_or_else(|| SimError::Argument(format!("expected random:<seed>:<n>, got {spec:?}")))?;
        let seed: u64 = seed
            .parse()
            .map_err(|_| SimError::Argument(format!("bad seed {seed:?}")))?;
        let n: usize = n.parse().map_err(|_| SimError::Argument(format!("bad length {n:?}")))?;
        return Ok(random_walk_inputs(seed, n));
    }
    // A bare path is read as a script.
    let text = std::fs::read_to_string(spec).map_err(|e| SimError::Argument(format!("{spec}: {e}")))?;
    parse_input_script(&text)
}

/// Builds scripted input sequences.
#[derive(Debug, Clone, Default)]
pub struct Script(Vec<InputState>);

impl Script {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hold(mut self, buttons: &[Button], frames: usize) -> Self {
        let s = InputState::from_buttons(buttons.iter().copied());
        self.0.extend(std::iter::repeat_n(s, frames));
        self
    }

    pub fn idle(self, frames: usize) -> Self {
        self.hold(&[], frames)
    }

    pub fn build(self) -> Vec<InputState> {
        self.0
    }
}
