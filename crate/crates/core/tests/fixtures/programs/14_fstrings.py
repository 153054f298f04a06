name = input().strip()
age = 30
message = f"{name} is {age} years old"
print(message)
print(f"{name.upper()}!")
