//! Wire framing: a 4-byte big-endian length followed by the payload.

use std::io::{self, Read, Write};

use super::ChannelError;

pub const DEFAULT_MAX_FRAME: usize = 16 * 1024 * 1024;

pub fn write_frame<W: Write + ?Sized>(w: &mut W, payload: &[u8], max: usize) -> Result<(), ChannelError> {
    if payload.len() > max || payload.len() > u32::MAX as usize {
        return Err(ChannelError::FrameTooLarge {
            len: payload.len(),
            max,
        });
    }
    let mut buf = Vec::with_capacity(4 + payload.len());
    buf.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    buf.extend_from_slice(payload);
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. `Ok(None)` means the stream ended cleanly between frames.
pub fn read_frame<R: Read + ?Sized>(r: &mut R, max: usize) -> Result<Option<Vec<u8>>, ChannelError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(ChannelError::Io("stream ended inside a frame header".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > max {
        return Err(ChannelError::FrameTooLarge { len, max });
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(Some(payload))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_big_endian_length() {
        let mut out = Vec::new();
        write_frame(&mut out, b"abc", DEFAULT_MAX_FRAME).unwrap();
        assert_eq!(out, [0, 0, 0, 3, b'a', b'b', b'c']);
    }

    #[test]
    fn oversize_frames_rejected_both_ways() {
        let mut out = Vec::new();
        assert!(matches!(
            write_frame(&mut out, &[0; 11], 10),
            Err(ChannelError::FrameTooLarge { len: 11, max: 10 })
        ));
        let wire = [0u8, 0, 0, 11];
        assert!(matches!(
            read_frame(&mut &wire[..], 10),
            Err(ChannelError::FrameTooLarge { .. })
        ));
    }

    #[test]
    fn clean_eof_and_truncation() {
        assert_eq!(read_frame(&mut &[][..], 10).unwrap(), None);
        assert!(read_frame(&mut &[0u8, 0][..], 10).is_err());
        assert!(read_frame(&mut &[0u8, 0, 0, 5, 1][..], 10).is_err());
    }

    proptest! {
        #[test]
        fn frames_decode_in_order(msgs in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..300), 0..20)) {
            let mut wire = Vec::new();
            for m in &msgs {
                write_frame(&mut wire, m, DEFAULT_MAX_FRAME).unwrap();
            }
            let mut r = &wire[..];
            let mut back = Vec::new();
            while let Some(m) = read_frame(&mut r, DEFAULT_MAX_FRAME).unwrap() {
                back.push(m);
            }
            prop_assert_eq!(back, msgs);
        }
    }
}
