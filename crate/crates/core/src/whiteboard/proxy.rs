//! Gateway proxy: turns device messages into tuples and control text into
//! device commands.
//!
//! Every message body starts with a one-byte code picking its converter.
//! Decoded messages are published as `proxy/<pid>/<devid>/<name>` with a
//! canonical `key=value` text rendering as data.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::ProxyError;
use crate::types::{MoteDescriptor, Pid, RubiconAddress};
use crate::whiteboard::Tuple;

pub const JOINED: u8 = 1;
pub const CTRL_ACTUATE: u8 = 2;
pub const CTRL_PERIODIC: u8 = 3;
pub const UPDATES: u8 = 4;

pub trait Converter: std::fmt::Debug + Send {
    fn code(&self) -> u8;
    fn name(&self) -> &'static str;
    /// Render a full message body (code byte included) as text.
    fn decode(&self, body: &[u8]) -> Result<String, ProxyError>;
    /// Build a message body (code byte included) from its text rendering.
    fn encode(&self, text: &str) -> Result<Vec<u8>, ProxyError>;
}

fn short(code: u8, body: &[u8], need: usize) -> Result<(), ProxyError> {
    if body.len() < need {
        return Err(ProxyError::Decode { code, reason: format!("{} bytes, need {need}", body.len()) });
    }
    Ok(())
}

/// Parse `k=v` words in order; every expected key must be present.
fn fields<'a>(text: &'a str, keys: &[&str], name: &'static str) -> Result<Vec<&'a str>, ProxyError> {
    let err = || ProxyError::Encode { name, text: text.to_owned() };
    let pairs: Vec<(&str, &str)> = text.split_whitespace().map(|w| w.split_once('=').ok_or_else(err)).collect::<Result<_, _>>()?;
    keys.iter().map(|k| pairs.iter().find(|(pk, _)| pk == k).map(|(_, v)| *v).ok_or_else(err)).collect()
}

fn num<T: std::str::FromStr>(s: &str, name: &'static str, text: &str) -> Result<T, ProxyError> {
    let parsed = match s.strip_prefix("0x") {
        Some(hex) => u64::from_str_radix(hex, 16).ok().and_then(|v| v.to_string().parse().ok()),
        None => s.parse().ok(),
    };
    parsed.ok_or_else(|| ProxyError::Encode { name, text: text.to_owned() })
}

/// Sink notification that a mote joined: `code devid(2) descr(4)`.
#[derive(Debug, Default)]
pub struct JoinedConverter;

impl JoinedConverter {
    pub fn body(devid: u16, d: &MoteDescriptor) -> Vec<u8> {
        let mut b = vec![JOINED];
        b.extend_from_slice(&devid.to_le_bytes());
        b.extend_from_slice(&d.encode());
        b
    }

    pub fn parse(body: &[u8]) -> Result<(u16, MoteDescriptor), ProxyError> {
        short(JOINED, body, 7)?;
        let devid = u16::from_le_bytes([body[1], body[2]]);
        let d = MoteDescriptor::decode(&body[3..]).expect("length checked");
        Ok((devid, d))
    }
}

impl Converter for JoinedConverter {
    fn code(&self) -> u8 {
        JOINED
    }
    fn name(&self) -> &'static str {
        "joined"
    }
    fn decode(&self, body: &[u8]) -> Result<String, ProxyError> {
        let (devid, d) = Self::parse(body)?;
        Ok(format!("devid={devid} type={} transducers={:#06x} actuators={}", d.mote_type, d.transducers, d.actuators))
    }
    fn encode(&self, text: &str) -> Result<Vec<u8>, ProxyError> {
        let n = self.name();
        let f = fields(text, &["devid", "type", "transducers", "actuators"], n)?;
        let d = MoteDescriptor { mote_type: num(f[1], n, text)?, transducers: num(f[2], n, text)?, actuators: num(f[3], n, text)? };
        Ok(Self::body(num(f[0], n, text)?, &d))
    }
}

/// Actuator command: `code actuator(1) value(1)`.
#[derive(Debug, Default)]
pub struct CtrlActuateConverter;

impl Converter for CtrlActuateConverter {
    fn code(&self) -> u8 {
        CTRL_ACTUATE
    }
    fn name(&self) -> &'static str {
        "ctrl_actuate"
    }
    fn decode(&self, body: &[u8]) -> Result<String, ProxyError> {
        short(CTRL_ACTUATE, body, 3)?;
        Ok(format!("actuator={} value={}", body[1], body[2]))
    }
    fn encode(&self, text: &str) -> Result<Vec<u8>, ProxyError> {
        let n = self.name();
        let f = fields(text, &["actuator", "value"], n)?;
        Ok(vec![CTRL_ACTUATE, num(f[0], n, text)?, num(f[1], n, text)?])
    }
}

/// Periodic sampling command: `code sensor(1) period_ms(2)`.
#[derive(Debug, Default)]
pub struct CtrlPeriodicConverter;

impl Converter for CtrlPeriodicConverter {
    fn code(&self) -> u8 {
        CTRL_PERIODIC
    }
    fn name(&self) -> &'static str {
        "ctrl_periodic"
    }
    fn decode(&self, body: &[u8]) -> Result<String, ProxyError> {
        short(CTRL_PERIODIC, body, 4)?;
        Ok(format!("sensor={} period_ms={}", body[1], u16::from_le_bytes([body[2], body[3]])))
    }
    fn encode(&self, text: &str) -> Result<Vec<u8>, ProxyError> {
        let n = self.name();
        let f = fields(text, &["sensor", "period_ms"], n)?;
        let mut b = vec![CTRL_PERIODIC, num(f[0], n, text)?];
        b.extend_from_slice(&num::<u16>(f[1], n, text)?.to_le_bytes());
        Ok(b)
    }
}

/// Sensor readings: `code count(1) count x (sensor(1) value(2, signed))`.
#[derive(Debug, Default)]
pub struct UpdatesConverter;

impl UpdatesConverter {
    pub fn body(readings: &[(u8, i16)]) -> Vec<u8> {
        let mut b = vec![UPDATES, readings.len() as u8];
        for (s, v) in readings {
            b.push(*s);
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }
}

impl Converter for UpdatesConverter {
    fn code(&self) -> u8 {
        UPDATES
    }
    fn name(&self) -> &'static str {
        "updates"
    }
    fn decode(&self, body: &[u8]) -> Result<String, ProxyError> {
        short(UPDATES, body, 2)?;
        let count = body[1] as usize;
        if body.len() != 2 + 3 * count {
            return Err(ProxyError::Decode { code: UPDATES, reason: format!("{count} readings in {} bytes", body.len()) });
        }
        let words: Vec<String> = body[2..].chunks_exact(3).map(|c| format!("s{}={}", c[0], i16::from_le_bytes([c[1], c[2]]))).collect();
        Ok(words.join(" "))
    }
    fn encode(&self, text: &str) -> Result<Vec<u8>, ProxyError> {
        let n = self.name();
        let err = || ProxyError::Encode { name: n, text: text.to_owned() };
        let mut readings = Vec::new();
        for w in text.split_whitespace() {
            let (k, v) = w.split_once('=').ok_or_else(err)?;
            let sensor = k.strip_prefix('s').ok_or_else(err)?;
            readings.push((num(sensor, n, text)?, num(v, n, text)?));
        }
        if readings.len() > u8::MAX as usize {
            return Err(err());
        }
        Ok(Self::body(&readings))
    }
}

#[derive(Debug, Default)]
pub struct Proxy {
    converters: BTreeMap<u8, Box<dyn Converter>>,
    raw_count: u64,
    replaced: u64,
}

impl Proxy {
    pub fn new() -> Self {
        Self::default()
    }

    /// The four converters used by the home test-bed.
    pub fn with_standard_converters() -> Self {
        let mut p = Self::new();
        p.install(Box::new(JoinedConverter));
        p.install(Box::new(CtrlActuateConverter));
        p.install(Box::new(CtrlPeriodicConverter));
        p.install(Box::new(UpdatesConverter));
        p
    }

    /// Register `c`. A converter already holding the same code is replaced
    /// and its name returned.
    pub fn install(&mut self, c: Box<dyn Converter>) -> Option<&'static str> {
        let code = c.code();
        let old = self.converters.insert(code, c).map(|o| o.name());
        if let Some(name) = old {
            self.replaced += 1;
            log::warn!("converter {name} for code {code} replaced");
        }
        old
    }

    pub fn converter(&self, code: u8) -> Option<&dyn Converter> {
        self.converters.get(&code).map(|c| c.as_ref())
    }

    pub fn codes(&self) -> Vec<u8> {
        self.converters.keys().copied().collect()
    }

    pub fn raw_count(&self) -> u64 {
        self.raw_count
    }

    pub fn replaced_count(&self) -> u64 {
        self.replaced
    }

    /// Render a device message as a tuple. Bodies with no converter, or
    /// that the converter rejects, fall back to a raw hex tuple.
    pub fn translate(&mut self, src: RubiconAddress, body: &[u8], now: u64, creator: Pid) -> Tuple {
        let rendered = body.first().and_then(|code| self.converters.get(code)).map(|c| (c.name(), c.decode(body)));
        match rendered {
            Some((name, Ok(text))) => Tuple::new(format!("proxy/{}/{}/{name}", src.pid, src.devid), text.into_bytes(), now, creator),
            other => {
                if let Some((_, Err(e))) = other {
                    log::debug!("raw fallback for {src}: {e}");
                }
                self.raw_count += 1;
                let mut hex = String::with_capacity(body.len() * 2);
                for b in body {
                    let _ = write!(hex, "{b:02x}");
                }
                Tuple::new(format!("proxy/raw/{}/{}/{}", src.pid, src.devid, self.raw_count), hex.into_bytes(), now, creator)
            }
        }
    }

    /// Build a device command body from a converter name and its text.
    pub fn command(&self, name: &str, text: &str) -> Result<Vec<u8>, ProxyError> {
        let c = self.converters.values().find(|c| c.name() == name).ok_or(ProxyError::NoConverter(0))?;
        c.encode(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SRC: RubiconAddress = RubiconAddress::new(10, 7);

    #[test]
    fn joined_renders_descriptor() {
        let mut p = Proxy::with_standard_converters();
        let body = JoinedConverter::body(7, &MoteDescriptor { mote_type: 2, transducers: 5, actuators: 1 });
        let t = p.translate(SRC, &body, 42, 10);
        assert_eq!(t.key, "proxy/10/7/joined");
        assert_eq!(t.data, b"devid=7 type=2 transducers=0x0005 actuators=1");
        assert_eq!((t.timestamp, t.creator), (42, 10));
    }

    #[test]
    fn updates_under_updates_key() {
        let mut p = Proxy::with_standard_converters();
        let t = p.translate(SRC, &UpdatesConverter::body(&[(0, 1), (3, -4)]), 0, 10);
        assert_eq!(t.key, "proxy/10/7/updates");
        assert_eq!(t.data, b"s0=1 s3=-4");
    }

    #[test]
    fn unregistered_code_is_raw() {
        let mut p = Proxy::with_standard_converters();
        let t = p.translate(SRC, &[0x99, 0xAB], 0, 10);
        assert_eq!(t.key, "proxy/raw/10/7/1");
        assert_eq!(t.data, b"99ab");
        let t = p.translate(SRC, &[], 0, 10);
        assert_eq!(t.key, "proxy/raw/10/7/2");
        // A known code with a bad body is raw too.
        p.translate(SRC, &[JOINED, 1], 0, 10);
        assert_eq!(p.raw_count(), 3);
    }

    #[test]
    fn duplicate_install_replaces() {
        let mut p = Proxy::new();
        assert_eq!(p.install(Box::new(UpdatesConverter)), None);
        assert_eq!(p.install(Box::new(UpdatesConverter)), Some("updates"));
        assert_eq!(p.codes(), vec![UPDATES]);
        assert_eq!(p.replaced_count(), 1);
    }

    #[test]
    fn commands_encode() {
        let p = Proxy::with_standard_converters();
        assert_eq!(p.command("ctrl_actuate", "actuator=1 value=255").unwrap(), vec![2, 1, 255]);
        assert_eq!(p.command("ctrl_periodic", "sensor=0 period_ms=500").unwrap(), vec![3, 0, 0xF4, 0x01]);
        assert!(p.command("ctrl_actuate", "actuator=1").is_err());
        assert!(p.command("nope", "").is_err());
    }

    proptest! {
        #[test]
        fn decode_encode_round_trip(
            devid in any::<u16>(), t in any::<u8>(), tr in any::<u16>(), a in any::<u8>(),
            act in any::<(u8, u8)>(), per in any::<(u8, u16)>(),
            ups in prop::collection::vec(any::<(u8, i16)>(), 0..20),
        ) {
            let p = Proxy::with_standard_converters();
            let bodies = vec![
                JoinedConverter::body(devid, &MoteDescriptor { mote_type: t, transducers: tr, actuators: a }),
                vec![CTRL_ACTUATE, act.0, act.1],
                [vec![CTRL_PERIODIC, per.0], per.1.to_le_bytes().to_vec()].concat(),
                UpdatesConverter::body(&ups),
            ];
            for b in bodies {
                let c = p.converter(b[0]).unwrap();
                let text = c.decode(&b).unwrap();
                prop_assert_eq!(c.encode(&text).unwrap(), b);
            }
        }
    }
}
