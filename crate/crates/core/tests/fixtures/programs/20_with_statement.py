import io


def read_all(stream):
    with stream as fh:
        data = fh.read()
    return data


buf = io.StringIO("line one\nline two\n")
text = read_all(buf)
print(text.count("\n"))
print(text.splitlines()[-1])
