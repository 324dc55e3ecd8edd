//! Raw little-endian codec for episode records. Numeric payloads are
//! written as their IEEE-754 bits, so round-trips are bit-exact.

use crate::types::{
    ControlTelemetry, EpisodeMeta, EpisodeRecord, FailureReason, ForceModifier, ForceVector,
    HybridCommand, Instruction, Outcome, SyncedFrame, TactileFrame, TargetId, TaskId, Vec3,
};

use super::DataError;

pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self { buf: Vec::new() }
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn bool(&mut self, v: bool) {
        self.buf.push(v as u8);
    }

    pub fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn vec3(&mut self, v: &Vec3) {
        self.f64(v.x);
        self.f64(v.y);
        self.f64(v.z);
    }

    pub fn force(&mut self, f: &ForceVector) {
        self.f64(f.normal);
        self.f64(f.shear_x);
        self.f64(f.shear_y);
    }

    pub fn f64_slice(&mut self, vs: &[f64]) {
        self.u32(vs.len() as u32);
        for &v in vs {
            self.f64(v);
        }
    }
}

impl Default for Writer {
    fn default() -> Self {
        Self::new()
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn done(&self) -> bool {
        self.pos == self.buf.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.pos + n > self.buf.len() {
            return Err(DataError::Corrupt("episode payload truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn f64(&mut self) -> Result<f64, DataError> {
        Ok(f64::from_bits(u64::from_le_bytes(
            self.take(8)?.try_into().unwrap(),
        )))
    }

    pub fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u8(&mut self) -> Result<u8, DataError> {
        Ok(self.take(1)?[0])
    }

    pub fn bool(&mut self) -> Result<bool, DataError> {
        Ok(self.u8()? != 0)
    }

    pub fn string(&mut self) -> Result<String, DataError> {
        let n = self.u32()? as usize;
        Ok(String::from_utf8_lossy(self.take(n)?).into_owned())
    }

    pub fn vec3(&mut self) -> Result<Vec3, DataError> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }

    pub fn force(&mut self) -> Result<ForceVector, DataError> {
        Ok(ForceVector::new(self.f64()?, self.f64()?, self.f64()?))
    }

    pub fn f64_vec(&mut self) -> Result<Vec<f64>, DataError> {
        let n = self.u32()? as usize;
        (0..n).map(|_| self.f64()).collect()
    }
}

fn task_tag(t: TaskId) -> u8 {
    match t {
        TaskId::Insert => 0,
        TaskId::Extract => 1,
        TaskId::Grasp => 2,
        TaskId::Wipe => 3,
    }
}

fn task_from(tag: u8) -> Result<TaskId, DataError> {
    TaskId::ALL
        .get(tag as usize)
        .copied()
        .ok_or_else(|| DataError::Corrupt(format!("bad task tag {tag}")))
}

fn modifier_tag(m: ForceModifier) -> u8 {
    ForceModifier::ALL.iter().position(|&x| x == m).unwrap() as u8
}

fn modifier_from(tag: u8) -> Result<ForceModifier, DataError> {
    ForceModifier::ALL
        .get(tag as usize)
        .copied()
        .ok_or_else(|| DataError::Corrupt(format!("bad modifier tag {tag}")))
}

fn target_tag(t: TargetId) -> u8 {
    TargetId::ALL.iter().position(|&x| x == t).unwrap() as u8
}

fn target_from(tag: u8) -> Result<TargetId, DataError> {
    TargetId::ALL
        .get(tag as usize)
        .copied()
        .ok_or_else(|| DataError::Corrupt(format!("bad target tag {tag}")))
}

fn outcome_tag(o: &Outcome) -> (u8, u8) {
    match o {
        Outcome::Success => (0, 0),
        Outcome::Failure(r) => (
            1,
            match r {
                FailureReason::Deformed => 0,
                FailureReason::Dropped => 1,
                FailureReason::Slipped => 2,
                FailureReason::NotLifted => 3,
                FailureReason::InsufficientForce => 4,
                FailureReason::NotSeated => 5,
                FailureReason::NotExtracted => 6,
            },
        ),
    }
}

fn outcome_from(tag: u8, reason: u8) -> Result<Outcome, DataError> {
    if tag == 0 {
        return Ok(Outcome::Success);
    }
    let reasons = [
        FailureReason::Deformed,
        FailureReason::Dropped,
        FailureReason::Slipped,
        FailureReason::NotLifted,
        FailureReason::InsufficientForce,
        FailureReason::NotSeated,
        FailureReason::NotExtracted,
    ];
    reasons
        .get(reason as usize)
        .map(|&r| Outcome::Failure(r))
        .ok_or_else(|| DataError::Corrupt(format!("bad failure tag {reason}")))
}

pub fn write_instruction(w: &mut Writer, ins: &Instruction) {
    w.u8(task_tag(ins.task));
    w.u8(modifier_tag(ins.modifier));
    w.u8(target_tag(ins.target));
    match &ins.free_text {
        Some(t) => {
            w.bool(true);
            w.string(t);
        }
        None => w.bool(false),
    }
}

pub fn read_instruction(r: &mut Reader) -> Result<Instruction, DataError> {
    let task = task_from(r.u8()?)?;
    let modifier = modifier_from(r.u8()?)?;
    let target = target_from(r.u8()?)?;
    let free_text = if r.bool()? { Some(r.string()?) } else { None };
    Ok(Instruction {
        task,
        modifier,
        target,
        free_text,
    })
}

fn write_command(w: &mut Writer, c: &HybridCommand) {
    w.vec3(&c.p_target);
    w.force(&c.f_target_external);
    w.f64(c.grip_width_target);
    w.f64(c.f_target_grasp);
}

fn read_command(r: &mut Reader) -> Result<HybridCommand, DataError> {
    Ok(HybridCommand {
        p_target: r.vec3()?,
        f_target_external: r.force()?,
        grip_width_target: r.f64()?,
        f_target_grasp: r.f64()?,
    })
}

pub fn write_episode(w: &mut Writer, ep: &EpisodeRecord) {
    w.string(&ep.meta.scenario);
    w.u64(ep.meta.seed);
    w.string(&ep.meta.config_hash);
    write_instruction(w, &ep.meta.instruction);
    let (tag, reason) = outcome_tag(&ep.outcome);
    w.u8(tag);
    w.u8(reason);
    w.u32(ep.frames.len() as u32);
    for f in &ep.frames {
        w.f64(f.timestamp);
        w.f64_slice(&f.observation);
        w.f64(f.tactile.timestamp);
        w.force(&f.tactile.left);
        w.force(&f.tactile.right);
        write_command(w, &f.command);
        w.force(&f.measured_external);
        w.force(&f.telemetry.delta_f);
        w.vec3(&f.telemetry.p_hybrid);
        w.bool(f.telemetry.deadband_active);
    }
}

pub fn read_episode(r: &mut Reader) -> Result<EpisodeRecord, DataError> {
    let scenario = r.string()?;
    let seed = r.u64()?;
    let config_hash = r.string()?;
    let instruction = read_instruction(r)?;
    let outcome = {
        let tag = r.u8()?;
        let reason = r.u8()?;
        outcome_from(tag, reason)?
    };
    let n = r.u32()? as usize;
    let mut frames = Vec::with_capacity(n);
    for _ in 0..n {
        let timestamp = r.f64()?;
        let observation = r.f64_vec()?;
        let tactile = TactileFrame {
            timestamp: r.f64()?,
            left: r.force()?,
            right: r.force()?,
        };
        let command = read_command(r)?;
        let measured_external = r.force()?;
        let telemetry = ControlTelemetry {
            delta_f: r.force()?,
            p_hybrid: r.vec3()?,
            deadband_active: r.bool()?,
        };
        frames.push(SyncedFrame {
            timestamp,
            observation,
            tactile,
            command,
            measured_external,
            telemetry,
        });
    }
    Ok(EpisodeRecord {
        meta: EpisodeMeta {
            scenario,
            seed,
            config_hash,
            instruction,
        },
        frames,
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Vec3;

    fn sample_episode() -> EpisodeRecord {
        let frame = SyncedFrame {
            timestamp: 0.05,
            observation: vec![0.1, -0.2, 3.0e-7, 1.0 / 3.0],
            tactile: TactileFrame {
                timestamp: 0.0504,
                left: ForceVector::new(2.0, 0.01, -0.3),
                right: ForceVector::new(1.9, -0.01, -0.29),
            },
            command: HybridCommand {
                p_target: Vec3::new(0.1, 0.2, 0.3),
                f_target_external: ForceVector::new(3.5, 0.0, 0.0),
                grip_width_target: 0.04,
                f_target_grasp: 4.0,
            },
            measured_external: ForceVector::new(3.45, 0.02, 0.0),
            telemetry: ControlTelemetry {
                delta_f: ForceVector::new(0.05, -0.02, 0.0),
                p_hybrid: Vec3::new(0.1, 0.2, 0.2999),
                deadband_active: false,
            },
        };
        EpisodeRecord {
            meta: EpisodeMeta {
                scenario: "wipe".into(),
                seed: 17,
                config_hash: "deadbeef".into(),
                instruction: Instruction::new(TaskId::Wipe, ForceModifier::Neutral, TargetId::Whiteboard),
            },
            frames: vec![frame; 5],
            outcome: Outcome::Failure(FailureReason::InsufficientForce),
        }
    }

    #[test]
    fn episode_roundtrip_is_bit_exact() {
        let ep = sample_episode();
        let mut w = Writer::new();
        write_episode(&mut w, &ep);
        let bytes = w.into_bytes();
        let mut r = Reader::new(&bytes);
        let back = read_episode(&mut r).unwrap();
        assert!(r.done());
        assert_eq!(back, ep);
        // Spot-check an awkward float survives exactly.
        assert_eq!(
            back.frames[0].observation[3].to_bits(),
            (1.0f64 / 3.0).to_bits()
        );
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let ep = sample_episode();
        let mut w = Writer::new();
        write_episode(&mut w, &ep);
        let bytes = w.into_bytes();
        let mut r = Reader::new(&bytes[..bytes.len() / 2]);
        assert!(read_episode(&mut r).is_err());
    }
}
