//! A backend that plays a perfect subject.
//!
//! It reads each prompt exactly as a model would — the data points come from
//! the loss-definition exchange, the current point from the latest
//! instruction — computes the exact answer with the oracle algorithms, and
//! replies in the expected answer formats. Feeding it through the full
//! experiment must reproduce the reference losses, which is the end-to-end
//! identity the metric tests pin down.

use std::sync::LazyLock;

use regex::Regex;

use super::{BackendSession, ChatMessage, LlmError, Role};
use crate::domain::{ProblemInstance, Solution};
use crate::oracles::{gd_step, grid_iter, grid_optimum, hc_neighbors, hc_step};
use crate::prompts::{format_number, format_tuple, parse_last_tuple};

/// Longest combination list the oracle will write out before eliding, the
/// way a real model truncates unreasonably long enumerations.
const GRID_REPLY_CAP: usize = 512;

static LEARNING_RATE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"learning rate of\s*([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)").expect("valid regex")
});

static GRID_BOUNDS_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"integers of\s*(-?\d+)\s*to\s*(-?\d+)").expect("valid regex"));

pub struct PerfectOracleSession;

fn protocol(detail: impl Into<String>) -> LlmError {
    LlmError::Protocol(detail.into())
}

fn last_user(messages: &[ChatMessage]) -> Result<&ChatMessage, LlmError> {
    messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .ok_or_else(|| protocol("no user message to answer"))
}

/// Recovers the instance targets from the loss-definition prompt earlier in
/// the conversation.
fn instance_from(messages: &[ChatMessage]) -> Result<ProblemInstance, LlmError> {
    let data_msg = messages
        .iter()
        .find(|m| m.role == Role::User && m.content.contains("Given the data points"))
        .ok_or_else(|| protocol("no loss definition in the conversation"))?;
    let y = parse_last_tuple(&data_msg.content)
        .ok_or_else(|| protocol("loss definition carries no data tuple"))?;
    let d = y.len();
    Ok(ProblemInstance {
        id: "oracle".into(),
        d,
        y,
        init: vec![0.0; d],
    })
}

fn latest_user_containing<'a>(
    messages: &'a [ChatMessage],
    marker: &str,
) -> Result<&'a ChatMessage, LlmError> {
    messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User && m.content.contains(marker))
        .ok_or_else(|| protocol(format!("no earlier prompt containing '{marker}'")))
}

fn point_in(msg: &ChatMessage, d: usize) -> Result<Solution, LlmError> {
    let values =
        parse_last_tuple(&msg.content).ok_or_else(|| protocol("prompt carries no point tuple"))?;
    if values.len() != d {
        return Err(protocol(format!(
            "prompt point has {} values, expected {d}",
            values.len()
        )));
    }
    Solution::new(values).map_err(|e| protocol(e.to_string()))
}

fn grid_bounds_in(msg: &ChatMessage) -> Result<(i64, i64), LlmError> {
    let caps = GRID_BOUNDS_RE
        .captures(&msg.content)
        .ok_or_else(|| protocol("grid prompt names no integer bounds"))?;
    let low = caps[1].parse().map_err(|_| protocol("bad grid low bound"))?;
    let high = caps[2].parse().map_err(|_| protocol("bad grid high bound"))?;
    Ok((low, high))
}

fn define_loss_reply(y: &[f64]) -> String {
    let terms: Vec<String> = y
        .iter()
        .enumerate()
        .map(|(i, v)| format!("(ŷ{}-{})^2", i + 1, format_number(*v)))
        .collect();
    format!(
        "The MSE loss function for the given data points (y1, y2, ...) = {} with respect to ŷs is: (1/{})[{}]",
        format_tuple(y),
        y.len(),
        terms.join(" + ")
    )
}

fn solution_list(solutions: &[Solution], elided: bool) -> String {
    let parts: Vec<String> = solutions.iter().map(|s| format_tuple(s.values())).collect();
    if elided {
        format!("[{}, ...]", parts.join(", "))
    } else {
        format!("[{}]", parts.join(", "))
    }
}

fn answer(messages: &[ChatMessage]) -> Result<String, LlmError> {
    let prompt = last_user(messages)?;
    let text = prompt.content.as_str();

    if text.contains("Given the data points") {
        let y = parse_last_tuple(text).ok_or_else(|| protocol("no data tuple to define a loss over"))?;
        return Ok(define_loss_reply(&y));
    }

    let instance = instance_from(messages)?;

    if text.contains("learning rate of") {
        let lr: f64 = LEARNING_RATE_RE
            .captures(text)
            .and_then(|c| c[1].parse().ok())
            .ok_or_else(|| protocol("gradient prompt names no learning rate"))?;
        let point = point_in(prompt, instance.d)?;
        let next = gd_step(&instance, &point, lr).map_err(|e| protocol(e.to_string()))?;
        return Ok(format!(
            "Explanation : Differentiate the loss at the current point and move against the gradient scaled by the learning rate.\nShort Answer: After calculation, the next update point is (ŷ1_new, ŷ2_new, ....) = {}",
            format_tuple(next.values())
        ));
    }

    if text.contains("hill climbing") {
        let current = point_in(prompt, instance.d)?;
        let neighbors = hc_neighbors(&current);
        return Ok(format!(
            "Explanation : Add one and subtract one from each coordinate in turn.\nList : {}",
            solution_list(&neighbors, false)
        ));
    }

    if text.contains("Which neighbor has the smallest MSE loss") {
        let generate = latest_user_containing(messages, "The current solution is")?;
        let current = point_in(generate, instance.d)?;
        let (best, _) = hc_step(&instance, &current);
        return Ok(format!(
            "Explanation : Compare the MSE loss of every neighbor.\nList : {}",
            solution_list(&[best], false)
        ));
    }

    if text.contains("do grid search") {
        let (low, high) = grid_bounds_in(prompt)?;
        let points: Vec<Solution> = grid_iter(low, high, instance.d)
            .take(GRID_REPLY_CAP + 1)
            .collect();
        let elided = points.len() > GRID_REPLY_CAP;
        let shown = if elided {
            &points[..GRID_REPLY_CAP]
        } else {
            &points[..]
        };
        return Ok(format!(
            "Explanation : Take every integer from {low} to {high} for each coordinate and combine them.\nList : {}",
            solution_list(shown, elided)
        ));
    }

    if text.contains("Which combination has the smallest MSE loss") {
        let create = latest_user_containing(messages, "integers of")?;
        let (low, high) = grid_bounds_in(create)?;
        let best = grid_optimum(&instance, low, high);
        return Ok(format!(
            "Explanation : Evaluate the MSE loss at every combination and keep the smallest.\nList : {}",
            solution_list(&[best], false)
        ));
    }

    if text.contains("unknown MSE loss function") {
        // the data points were revealed when the loss was defined, so the
        // perfect guess is the target itself
        let vals: Vec<String> = instance.y.iter().map(|&v| format_number(v)).collect();
        return Ok(format!("(ŷ1, ŷ2, ....) = [{}]", vals.join(", ")));
    }

    Err(protocol(format!(
        "perfect oracle cannot interpret prompt: {}",
        text.chars().take(80).collect::<String>()
    )))
}

impl BackendSession for PerfectOracleSession {
    fn complete(&mut self, messages: &[ChatMessage], n: usize) -> Result<Vec<String>, LlmError> {
        let reply = answer(messages)?;
        Ok(vec![reply; n])
    }
}
