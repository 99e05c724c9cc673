//! Blocking CMI transport over a TCP stream, for running the controller and
//! a WAE as separate processes. The bytes match the simulated links.

use std::io::{self, Read, Write};
use std::net::TcpStream;

use super::codec::{encode_frame, DecodeError, FrameDecoder};
use super::msg::CmiMessage;

#[derive(Debug)]
pub struct CmiStream {
    stream: TcpStream,
    decoder: FrameDecoder,
}

impl CmiStream {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self {
            stream,
            decoder: FrameDecoder::new(),
        })
    }

    pub fn send(&mut self, msg: &CmiMessage) -> io::Result<()> {
        let bytes = encode_frame(msg).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        self.stream.write_all(&bytes)
    }

    /// Next frame off the wire. `Ok(None)` on clean end of stream; a
    /// rejected frame is returned as `Some(Err(_))` and the stream stays
    /// usable.
    pub fn recv(&mut self) -> io::Result<Option<Result<CmiMessage, DecodeError>>> {
        let mut buf = [0u8; 4096];
        loop {
            if let Some(frame) = self.decoder.next_frame() {
                return Ok(Some(frame));
            }
            let n = self.stream.read(&mut buf)?;
            if n == 0 {
                return Ok(None);
            }
            self.decoder.push(&buf[..n]);
        }
    }

    pub fn decoder(&self) -> &FrameDecoder {
        &self.decoder
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmi::msg::{CmiBody, ChannelSet, ConfigAck};
    use crate::cmi::session::{CmiSession, Inbound};
    use std::net::TcpListener;

    #[test]
    fn handshake_and_request_over_loopback() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let wae = std::thread::spawn(move || {
            let (sock, _) = listener.accept().unwrap();
            let mut s = CmiStream::new(sock).unwrap();
            let mut session = CmiSession::wae(0, 2);
            let hello = s.recv().unwrap().unwrap().unwrap();
            let Inbound::Reply(ack) = session.on_inbound(&hello).unwrap() else { panic!() };
            s.send(&ack).unwrap();
            let req = s.recv().unwrap().unwrap().unwrap();
            assert_eq!(session.on_inbound(&req), Ok(Inbound::Deliver));
            let CmiBody::ChannelSet(c) = &req.body else { panic!("{req:?}") };
            s.send(&CmiMessage::new(req.correlation_id, CmiBody::ConfigAck(ConfigAck { ap: Some(c.ap), snapshot: None })))
                .unwrap();
            assert!(s.recv().unwrap().is_none());
            assert!(s.decoder().accounted());
        });

        let mut s = CmiStream::new(TcpStream::connect(addr).unwrap()).unwrap();
        let mut session = CmiSession::controller(9);
        s.send(&session.start(1).unwrap()).unwrap();
        let ack = s.recv().unwrap().unwrap().unwrap();
        assert!(matches!(session.on_inbound(&ack), Ok(Inbound::Established(_))));
        s.send(&CmiMessage::new(2, CmiBody::ChannelSet(ChannelSet { ap: 1, channel: 6 }))).unwrap();
        let reply = s.recv().unwrap().unwrap().unwrap();
        assert_eq!(reply.correlation_id, 2);
        assert!(matches!(reply.body, CmiBody::ConfigAck(ConfigAck { ap: Some(1), .. })));
        drop(s);
        wae.join().unwrap();
    }
}
