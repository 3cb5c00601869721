//! Pass-through publisher to a real MQTT broker.
//!
//! Speaks the minimum of MQTT 3.1.1 needed to mirror simulated traffic:
//! CONNECT (clean session), PUBLISH at QoS 0, DISCONNECT. Enabled by the
//! `MODBOT_MQTT_HOST` / `MODBOT_MQTT_PORT` environment variables.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use crate::error::{Error, Result};

pub const HOST_VAR: &str = "MODBOT_MQTT_HOST";
pub const PORT_VAR: &str = "MODBOT_MQTT_PORT";

pub struct MqttBridge {
    stream: TcpStream,
    published: u64,
}

fn remaining_length(mut len: usize, out: &mut Vec<u8>) {
    loop {
        let mut byte = (len % 128) as u8;
        len /= 128;
        if len > 0 {
            byte |= 0x80;
        }
        out.push(byte);
        if len == 0 {
            break;
        }
    }
}

fn utf8_field(s: &str, out: &mut Vec<u8>) {
    out.extend_from_slice(&(s.len() as u16).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn packet(header: u8, body: &[u8]) -> Vec<u8> {
    let mut p = vec![header];
    remaining_length(body.len(), &mut p);
    p.extend_from_slice(body);
    p
}

pub fn connect_packet(client_id: &str) -> Vec<u8> {
    let mut body = Vec::new();
    utf8_field("MQTT", &mut body);
    body.push(4); // protocol level 3.1.1
    body.push(0x02); // clean session
    body.extend_from_slice(&60u16.to_be_bytes());
    utf8_field(client_id, &mut body);
    packet(0x10, &body)
}

pub fn publish_packet(topic: &str, payload: &[u8]) -> Vec<u8> {
    let mut body = Vec::new();
    utf8_field(topic, &mut body);
    body.extend_from_slice(payload);
    packet(0x30, &body)
}

impl MqttBridge {
    /// `None` when the environment does not request a bridge.
    pub fn from_env() -> Option<Result<Self>> {
        let host = std::env::var(HOST_VAR).ok()?;
        let port = match std::env::var(PORT_VAR) {
            Ok(p) => match p.parse::<u16>() {
                Ok(p) => p,
                Err(_) => return Some(Err(Error::InvalidParameter(format!("{PORT_VAR}={p}")))),
            },
            Err(_) => 1883,
        };
        Some(Self::connect(&host, port, "modbot-master"))
    }

    pub fn connect(host: &str, port: u16, client_id: &str) -> Result<Self> {
        let mut stream = TcpStream::connect((host, port))?;
        stream.set_read_timeout(Some(Duration::from_secs(5)))?;
        stream.write_all(&connect_packet(client_id))?;
        let mut ack = [0u8; 4];
        stream.read_exact(&mut ack)?;
        if ack[0] != 0x20 || ack[3] != 0 {
            return Err(Error::Io(format!("broker refused connection: {ack:02x?}")));
        }
        Ok(Self { stream, published: 0 })
    }

    pub fn publish(&mut self, topic: &str, payload: &[u8]) -> Result<()> {
        self.stream.write_all(&publish_packet(topic, payload))?;
        self.published += 1;
        Ok(())
    }

    pub fn published(&self) -> u64 {
        self.published
    }
}

impl Drop for MqttBridge {
    fn drop(&mut self) {
        let _ = self.stream.write_all(&[0xE0, 0x00]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;

    #[test]
    fn remaining_length_encoding() {
        for (len, want) in [(0, vec![0x00]), (127, vec![0x7F]), (128, vec![0x80, 0x01]), (16_383, vec![0xFF, 0x7F])] {
            let mut out = Vec::new();
            remaining_length(len, &mut out);
            assert_eq!(out, want);
        }
    }

    #[test]
    fn publishes_to_a_broker() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        let broker = std::thread::spawn(move || {
            let (mut sock, _) = listener.accept().unwrap();
            let mut connect = vec![0u8; connect_packet("t").len()];
            sock.read_exact(&mut connect).unwrap();
            sock.write_all(&[0x20, 0x02, 0x00, 0x00]).unwrap();
            let mut rest = Vec::new();
            sock.read_to_end(&mut rest).unwrap();
            (connect, rest)
        });
        {
            let mut bridge = MqttBridge::connect("127.0.0.1", port, "t").unwrap();
            bridge.publish("modules/0/traj", b"{}").unwrap();
            assert_eq!(bridge.published(), 1);
        }
        let (connect, rest) = broker.join().unwrap();
        assert_eq!(connect, connect_packet("t"));
        let mut want = publish_packet("modules/0/traj", b"{}");
        want.extend_from_slice(&[0xE0, 0x00]);
        assert_eq!(rest, want);
    }
}
