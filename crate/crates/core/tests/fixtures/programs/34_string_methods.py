text = input()
upper = text.upper()
count = text.count("a")
parts = text.split("a")
print(upper)
print(count)
print(parts)
print(text.replace("a", "@"))
