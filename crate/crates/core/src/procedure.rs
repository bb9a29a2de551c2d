//! Procedures, assembly states and step-event sequences.
//!
//! Frames are the canonical time unit everywhere in the crate; seconds are
//! derived through [`Fps`].

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{PsrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub u32);

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Install,
    Remove,
}

impl StepKind {
    pub fn opposite(self) -> StepKind {
        match self {
            StepKind::Install => StepKind::Remove,
            StepKind::Remove => StepKind::Install,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Install => "install",
            StepKind::Remove => "remove",
        }
    }
}

/// Frames per second as a positive rational `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fps {
    num: u32,
    den: u32,
}

impl Fps {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(PsrError::Structural(format!("fps must be positive, got {num}/{den}")));
        }
        let g = gcd(num, den);
        Ok(Fps { num: num / g, den: den / g })
    }

    pub fn integer(fps: u32) -> Result<Self> {
        Fps::new(fps, 1)
    }

    pub fn num(self) -> u32 {
        self.num
    }

    pub fn den(self) -> u32 {
        self.den
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `frame / fps`, computed as a single correctly rounded division.
    pub fn seconds(self, frame: u64) -> f64 {
        (frame as f64 * self.den as f64) / self.num as f64
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl fmt::Display for Fps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl core::str::FromStr for Fps {
    type Err = PsrError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || PsrError::Structural(format!("invalid fps `{s}`, expected `N` or `N/D`"));
        match s.split_once('/') {
            Some((n, d)) => Fps::new(n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?),
            None => Fps::integer(s.trim().parse().map_err(|_| bad())?),
        }
    }
}

// Integer rates serialize as JSON numbers, other rates as "num/den" strings.
impl Serialize for Fps {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        if self.den == 1 {
            s.serialize_u32(self.num)
        } else {
            s.collect_str(self)
        }
    }
}

impl<'de> Deserialize<'de> for Fps {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = Fps;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive integer or a \"num/den\" string")
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> core::result::Result<Fps, E> {
                let v = u32::try_from(v).map_err(E::custom)?;
                Fps::integer(v).map_err(E::custom)
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> core::result::Result<Fps, E> {
                let v = u32::try_from(v).map_err(E::custom)?;
                Fps::integer(v).map_err(E::custom)
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> core::result::Result<Fps, E> {
                v.parse().map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

pub fn frame_to_seconds(frame: u64, fps: Fps) -> f64 {
    fps.seconds(frame)
}

/// Fixed-width component bit-vector; bit `c` set means component `c` is installed.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ComponentBits {
    width: usize,
    words: Vec<u64>,
}

impl ComponentBits {
    pub fn zeros(width: usize) -> Self {
        ComponentBits { width, words: alloc::vec![0; width.div_ceil(64)] }
    }

    /// Parses a string such as `"10001000100000000"`; the first character is component 0.
    pub fn from_bit_str(s: &str) -> Result<Self> {
        let mut bits = ComponentBits::zeros(s.len());
        for (i, ch) in s.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => bits.set(i, true),
                other => return Err(PsrError::Structural(format!("invalid bit character `{other}` in `{s}`"))),
            }
        }
        Ok(bits)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.width, "bit {i} out of range for width {}", self.width);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.width, "bit {i} out of range for width {}", self.width);
        if value {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn xor(&self, other: &ComponentBits) -> Result<ComponentBits> {
        check_width(self.width, other.width)?;
        let words = self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect();
        Ok(ComponentBits { width: self.width, words })
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.width).filter(move |&i| self.get(i))
    }

    /// Applies a list of component changes as produced by [`state_diff`].
    pub fn apply(&mut self, changes: &[(usize, StepKind)]) -> Result<()> {
        for &(c, kind) in changes {
            if c >= self.width {
                return Err(PsrError::Structural(format!("component {c} out of range for width {}", self.width)));
            }
            self.set(c, kind == StepKind::Install);
        }
        Ok(())
    }
}

impl fmt::Display for ComponentBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.width {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for ComponentBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComponentBits({self})")
    }
}

impl Serialize for ComponentBits {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ComponentBits {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ComponentBits::from_bit_str(&s).map_err(serde::de::Error::custom)
    }
}

fn check_width(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(PsrError::Structural(format!("bit width mismatch: {a} vs {b}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssemblyState {
    pub bits: ComponentBits,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_id: Option<u32>,
}

impl AssemblyState {
    pub fn new(bits: ComponentBits, state_id: Option<u32>) -> Self {
        AssemblyState { bits, state_id }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub id: ActionId,
    pub name: String,
    pub component: usize,
    pub kind: StepKind,
}

/// A procedure: its components, the actions acting on them, and optionally
/// the nominal sequence of assembly states.
///
/// Step index `k` used by confidence streams refers to `actions[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Procedure {
    name: String,
    components: Vec<String>,
    actions: Vec<Action>,
    states: Vec<AssemblyState>,
    fps: Fps,
}

impl Procedure {
    pub fn new(
        name: impl Into<String>,
        components: Vec<String>,
        actions: Vec<Action>,
        states: Vec<AssemblyState>,
        fps: Fps,
    ) -> Result<Self> {
        let c = components.len();
        let mut ids = BTreeSet::new();
        for a in &actions {
            if a.component >= c {
                return Err(PsrError::Structural(format!(
                    "action {} references component {} but the procedure has {c} components",
                    a.id, a.component
                )));
            }
            if !ids.insert(a.id) {
                return Err(PsrError::Structural(format!("duplicate action id {}", a.id)));
            }
        }
        let mut state_ids = BTreeSet::new();
        for s in &states {
            if s.bits.width() != c {
                return Err(PsrError::Structural(format!(
                    "state {:?} has width {} but the procedure has {c} components",
                    s.state_id,
                    s.bits.width()
                )));
            }
            if let Some(id) = s.state_id {
                if !state_ids.insert(id) {
                    return Err(PsrError::Structural(format!("duplicate state id {id}")));
                }
            }
        }
        for pair in states.windows(2) {
            if pair[0].bits == pair[1].bits {
                return Err(PsrError::Structural(format!(
                    "consecutive states {:?} and {:?} are identical",
                    pair[0].state_id, pair[1].state_id
                )));
            }
        }
        Ok(Procedure { name: name.into(), components, actions, states, fps })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn components(&self) -> &[String] {
        &self.components
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    /// Number of recognizable steps (the length of every confidence vector).
    pub fn num_steps(&self) -> usize {
        self.actions.len()
    }

    pub fn states(&self) -> &[AssemblyState] {
        &self.states
    }

    pub fn fps(&self) -> Fps {
        self.fps
    }

    pub fn step_index(&self, id: ActionId) -> Option<usize> {
        self.actions.iter().position(|a| a.id == id)
    }

    pub fn action(&self, id: ActionId) -> Option<&Action> {
        self.actions.iter().find(|a| a.id == id)
    }

    /// First step index acting on `component` with the given kind.
    pub fn step_for(&self, component: usize, kind: StepKind) -> Option<usize> {
        self.actions.iter().position(|a| a.component == component && a.kind == kind)
    }

    pub fn state_by_id(&self, id: u32) -> Option<&AssemblyState> {
        self.states.iter().find(|s| s.state_id == Some(id))
    }

    pub fn state_id_of(&self, bits: &ComponentBits) -> Option<u32> {
        self.states.iter().find(|s| &s.bits == bits).and_then(|s| s.state_id)
    }

    pub fn state_ids(&self) -> Vec<u32> {
        self.states.iter().filter_map(|s| s.state_id).collect()
    }

    /// The 17-component toy motorcycle with its 12 annotated assembly states
    /// (initial state plus 11 construction states).
    ///
    /// Install actions have ids `0..17` (equal to the component index) and
    /// remove actions have ids `17..34`.
    pub fn meccano() -> Procedure {
        const COMPONENTS: [&str; 17] = [
            "left damping fork",
            "right damping fork",
            "left rear chassis",
            "right rear chassis",
            "left frame",
            "right frame",
            "left tail wing",
            "right tail wing",
            "headlamp",
            "left handle",
            "right handle",
            "front wheel",
            "rear wheel",
            "swimarm",
            "fuel tank",
            "tail wing pin",
            "driving shaft",
        ];
        const STATES: [&str; 12] = [
            "00000000000000000",
            "10001000100000000",
            "11001100100000000",
            "11001100111000000",
            "11101110111000000",
            "11111110111001000",
            "11111111111001000",
            "11111111111001001",
            "11111111111001101",
            "11111111111101101",
            "11111111111111101",
            "11111111111111111",
        ];
        let n = COMPONENTS.len();
        let mut actions = Vec::with_capacity(2 * n);
        for kind in [StepKind::Install, StepKind::Remove] {
            for (c, name) in COMPONENTS.iter().enumerate() {
                let offset = if kind == StepKind::Install { 0 } else { n };
                actions.push(Action {
                    id: ActionId((offset + c) as u32),
                    name: format!("{} {name}", kind.as_str()),
                    component: c,
                    kind,
                });
            }
        }
        let states = STATES
            .iter()
            .enumerate()
            .map(|(i, s)| AssemblyState::new(ComponentBits::from_bit_str(s).expect("static table"), Some(i as u32)))
            .collect();
        Procedure::new(
            "meccano",
            COMPONENTS.iter().map(|s| s.to_string()).collect(),
            actions,
            states,
            Fps::integer(10).expect("static fps"),
        )
        .expect("static procedure is valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub action: ActionId,
    pub component: usize,
    pub kind: StepKind,
    pub correct: bool,
    pub frame: u64,
    pub time_s: f64,
}

impl StepEvent {
    pub fn new(action: &Action, frame: u64, correct: bool, fps: Fps) -> Self {
        StepEvent {
            action: action.id,
            component: action.component,
            kind: action.kind,
            correct,
            frame,
            time_s: fps.seconds(frame),
        }
    }
}

/// Events of one video, sorted by frame with ties broken by ascending action id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSequence {
    pub video_id: String,
    pub fps: Fps,
    events: Vec<StepEvent>,
}

impl EventSequence {
    pub fn new(video_id: impl Into<String>, fps: Fps, mut events: Vec<StepEvent>) -> Result<Self> {
        events.sort_by_key(|e| (e.frame, e.action));
        for pair in events.windows(2) {
            if pair[0].frame == pair[1].frame && pair[0].action == pair[1].action {
                return Err(PsrError::Structural(format!(
                    "duplicate event: action {} at frame {}",
                    pair[0].action, pair[0].frame
                )));
            }
        }
        Ok(EventSequence { video_id: video_id.into(), fps, events })
    }

    pub fn empty(video_id: impl Into<String>, fps: Fps) -> Self {
        EventSequence { video_id: video_id.into(), fps, events: Vec::new() }
    }

    pub fn events(&self) -> &[StepEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Only the correctly executed steps (the ground truth used for metrics).
    pub fn correct_only(&self) -> EventSequence {
        EventSequence {
            video_id: self.video_id.clone(),
            fps: self.fps,
            events: self.events.iter().filter(|e| e.correct).cloned().collect(),
        }
    }

    pub fn action_order(&self) -> Vec<ActionId> {
        self.events.iter().map(|e| e.action).collect()
    }

    /// Checks every event against the procedure's action effects.
    pub fn validate(&self, proc: &Procedure) -> Result<()> {
        for e in &self.events {
            let action = proc.action(e.action).ok_or_else(|| {
                PsrError::Structural(format!(
                    "video {}: unknown action {} at frame {}",
                    self.video_id, e.action, e.frame
                ))
            })?;
            if action.component != e.component || action.kind != e.kind {
                return Err(PsrError::Structural(format!(
                    "video {}: event at frame {} says action {} acts on component {} ({}), procedure says {} ({})",
                    self.video_id,
                    e.frame,
                    e.action,
                    e.component,
                    e.kind.as_str(),
                    action.component,
                    action.kind.as_str()
                )));
            }
        }
        Ok(())
    }
}

/// Component state implied by all events at or before `frame`.
pub fn cumulative_state(seq: &EventSequence, proc: &Procedure, frame: u64) -> Result<ComponentBits> {
    let mut bits = ComponentBits::zeros(proc.num_components());
    for e in seq.events().iter().take_while(|e| e.frame <= frame) {
        if e.component >= bits.width() {
            return Err(PsrError::Structural(format!(
                "event at frame {} references component {} but the procedure has {}",
                e.frame,
                e.component,
                bits.width()
            )));
        }
        bits.set(e.component, e.kind == StepKind::Install);
    }
    Ok(bits)
}

/// Per-component changes from `prev` to `next`, ascending by component index.
pub fn state_diff(prev: &ComponentBits, next: &ComponentBits) -> Result<Vec<(usize, StepKind)>> {
    let changed = prev.xor(next)?;
    Ok(changed.iter_ones().map(|c| (c, if next.get(c) { StepKind::Install } else { StepKind::Remove })).collect())
}
